"""
A small Monte Carlo campaign
============================

Campaigns are JSON documents.  The bundled ``campaign_n10000`` repeats the
simulation design with 500 replicates; here we shrink it to a few
replicates to keep the run short.  Results do not depend on ``threads``.
"""

from jumpsem import CampaignConfig, SamplingDesign, run_campaign

cfg = CampaignConfig.load("campaign_n10000").replace(reps=10, design=SamplingDesign(n=2000))
report = run_campaign(cfg)

print(report.estimator_table("model1"))
print()
print(report.selection_table())

# rows.csv and summary.json
report.write("mc_demo_out")
