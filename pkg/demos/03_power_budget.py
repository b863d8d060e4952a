"""
Power budgets for the three form factors
========================================

Each wearable preset is a set of power domains that can be switched on and
off. The report keeps two numbers side by side: the exact sum of the rows
it is built from, and the supply-side headline measured for the complete
device, which is what battery-life math uses. Compute workloads fold into
the accelerator domain as energy-per-run times run rate.
"""
from biogap import power

for preset in ("headband", "sleeve", "chestband"):
    report = power.power_report(preset, battery=(150.0, 3.7))
    print(power.format_report(report))
    print(f"(row sum {report.total_mW:.2f} mW, headline "
          f"{report.reported_total_mW} mW)\n")

# switching a domain off re-derives the total from the rows, because the
# measured headline no longer describes the new configuration
headband = power.power_report("headband")
no_ppg = headband.with_domain_active("ppg", False)
print(f"headband without the optical sensor: {no_ppg.total_mW:.2f} mW "
      f"-> {no_ppg.battery_life_h:.1f} h")

# the on-device classifier costs energy per window; at one run every two
# seconds it is a sub-milliwatt line item
loaded = power.attach_workload(headband, "ssvep_online", (0.36, 0.5))
gap9 = loaded.domain("gap9")
print(f"\nwith a 0.36 mJ classifier every 2 s: gap9 {gap9.draw_mW:.2f} mW, "
      f"total {loaded.total_mW:.2f} mW, life {loaded.battery_life_h:.1f} h")

# trade study: how often can you afford to classify on a 150 mAh cell?
print("\nclassifier rate vs battery life (headband):")
for period_s in (4.0, 2.0, 1.0, 0.5):
    rep = power.attach_workload(headband, "ssvep_online", (0.36, 1.0 / period_s))
    print(f"  every {period_s:3.1f} s -> {rep.total_mW:6.2f} mW, "
          f"{rep.battery_life_h:5.1f} h")
