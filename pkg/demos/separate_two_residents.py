"""Train a small separation model on simulated two-resident data and look at what it produces.

Takes a few minutes on one core.
"""
from multires.data import SyntheticConfig, synthetic_instances
from multires.harness import RunConfig, evaluate_separation, fold_vocab, train_seq2res
from multires.seq2res import Seq2ResConfig, format_generation

# Overlap 0 means the two residents never share a sensor, so separation is learnable exactly.
data = synthetic_instances(SyntheticConfig(overlap=0.0, events_per_day=500, days=8, seed=1))
train = [i for i in data if i.day_id < 8]
test = [i for i in data if i.day_id == 8]
print(len(train), "train windows,", len(test), "test windows")
print("one window:", " ".join(train[0].window[:8]), "...")

cfg = RunConfig(seq2res=Seq2ResConfig(32, 32, 64))
cfg.training.sep_lr = 3e-3
cfg.training.sep_half_period = 30
vocab = fold_vocab(train)
result = train_seq2res(cfg, train, vocab, seed=0, epochs=60)
print("loss", [round(h, 3) for h in result.history[::10]])

scores = evaluate_separation(result.model, test, vocab)
print("test BLEU", round(scores["overall"], 3))
gen = scores["generations"][0]
print("generated:", format_generation(gen.tokens, vocab.itos))
print("target:   ", " ".join(test[0].target_sep))
