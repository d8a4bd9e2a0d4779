"""Backbone energy: ANN MACs vs SNN accumulates.

Counts operations for the event backbone architecture at 64x64 input and
sweeps a common firing rate to show where the spiking version stops paying
off.
"""
from spikefuse import energy as en
from spikefuse.backbones import SnnBackboneConfig

cfg = SnnBackboneConfig()
steps = 5
ann = en.layer_specs(cfg, 64, 1)
snn = en.layer_specs(cfg, 64, steps)
for l in ann:
    print(f"layer {l.index}: K={l.kernel} C_in={l.in_channels:4d} out={l.out_h}x{l.out_w}x{l.out_channels:<4d} "
          f"ops={l.ops:,}")
print(f"ANN MACs: {en.count_ann_macs(ann):,}")

print("\n  FR     eta    savings")
for fr in (0.0, 0.05, 0.1, 0.2, 0.4, 0.8, 1.0):
    rep = en.energy_report(ann, snn, en.FiringRateStats.constant(snn, fr))
    print(f"  {fr:4.2f}  {rep.eta:6.3f}  {rep.savings:7.3f}")

# the first layer sees real-valued slices, so N steps of it are MACs no matter what
rep = en.energy_report(ann, snn, en.FiringRateStats.constant(snn, 0.1))
print()
print(rep.to_text())
