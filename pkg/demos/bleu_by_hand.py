"""Sentence BLEU on a few separation outputs, next to the numbers worked out by hand."""
import math

from multires.data import EOS, SOS
from multires.metrics import bleu, bleu_report

ref = ["M01:ON", "M02:ON", "M03:ON", "M04:ON"]

# Identical sequences score 1.
print(bleu(ref, ref).value)

# One extra token: precisions are 4/5, 3/4, 2/3, 1/2 and the brevity penalty is 1
# because the candidate is the longer one. Value = (4/5 * 3/4 * 2/3 * 1/2) ** (1/4).
cand = ref + ["M05:ON"]
print(bleu(cand, ref))

# The other way round every precision is 1 and the shorter candidate pays BP = exp(1 - 5/4).
score = bleu(ref, cand)
print(round(score.value, 4), "vs", round(math.exp(-0.25), 4))

# A separation target carries EOS/SOS between the two residents; they are scored as tokens.
target = [4, 5, EOS, SOS, 6, 7, EOS]
swapped = [6, 7, EOS, SOS, 4, 5, EOS]
print("residents swapped:", round(bleu(swapped, target).value, 4))

# Corpus view: mean sentence BLEU overall and per activity label
rep = bleu_report([target, swapped], [target, target], [[0], [1]])
print("overall", round(rep["overall"], 4))
print("per activity", {k: round(v, 4) for k, v in rep["per_class"].items()})
