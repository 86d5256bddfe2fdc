"""
Kernel scheduling and receptive fields
======================================

Deeper pyramid levels carry coarser features, so their mixers get larger
kernels: 3/5/7/9 across the backbone stages and 5/7/9 across the neck
levels.  The payoff shows up in the receptive field: with the schedule the
heads see much wider input context than an all-3x3 baseline, and the growth
tracks the stride.
"""

from mhaf import assemble, load_preset, rf_report
from mhaf.ghfks import default_plan, uniform_plan

plan = default_plan()
print("backbone kernels:", dict(plan.backbone))
print("neck kernels    :", dict(plan.neck["shallow"]), "(both pathways)")

spec = load_preset("nano")

print("\nreceptive fields with the schedule:")
for entry in rf_report(assemble(spec, plan)):
    print(f"  {entry.node}  stride {entry.stride:<3} rf {entry.rf}")

print("\nreceptive fields with every kernel forced to 3x3:")
for entry in rf_report(assemble(spec, uniform_plan(3))):
    print(f"  {entry.node}  stride {entry.stride:<3} rf {entry.rf}")

# the schedule also survives a structural audit; an off-schedule plan
# is still constructable (for exactly this kind of ablation) but flagged
try:
    uniform_plan(3).validate()
except Exception as exc:
    print(f"\nall-3x3 plan fails the schedule check: {exc}")
