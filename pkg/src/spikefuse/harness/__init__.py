from .config import TrainConfig, desk_config, load_config, parse_config_text
from .metrics import Metrics, TrackResult, evaluate_metrics, write_curves
from .model import Tracker
from .optim import AdamState, adam_step, lr_schedule
from .train import TrainResult, evaluate, load_tracker, make_sequence, train
