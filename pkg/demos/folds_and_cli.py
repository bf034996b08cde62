"""Day-partitioned folds, then the same grid driven through the command line on simulated days."""
import tempfile
from pathlib import Path

from multires.cli import main
from multires.harness import make_fold_plan

plan = make_fold_plan(range(1, 27))
for k in range(1, 11):
    print(f"fold {k:2d}: test days {plan.test_days(k)}")

# synth -> prep -> run-all with a deliberately tiny model; three epochs only show the plumbing,
# the scores in the report are not meant to be good
work = Path(tempfile.mkdtemp())
main(["synth", "--overlap", "0.5", "--days", "3", "--events-per-day", "60", "--out", str(work / "raw")])
main(["prep", "--in", str(work / "raw"), "--out", str(work / "inst"), "--n-labels", "8"])
(work / "tiny.toml").write_text(f"""
[run]
fold_layout = "equal"
n_folds = 3
folds = [1]
models = ["q2l"]
output_dir = "{work / 'reports'}"
[seq2res]
enc_embed = 8
enc_hidden = 8
dec_embed = 16
[classifier]
embed = 8
hidden = 8
layers = 1
heads = 2
[training]
sep_epochs = 3
cls_epochs = 3
checkpoint_every = 0
[data]
instances = "{work / 'inst'}"
n_labels = 8
""")
main(["run-all", "--config", str(work / "tiny.toml")])
print("\n".join((work / "reports" / "report.txt").read_text().splitlines()[:20]))
