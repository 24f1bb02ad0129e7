# %% [markdown]
# # Training at desk scale
#
# Real phone/DSLR pairs are replaced by synthetic scenes that are blurred and
# washed out, then sprinkled with noise. A short run is enough to see the loss drop and the
# enhanced images move toward the clean ones. `ITERATIONS = 500` reproduces the
# acceptance run (about five minutes on one core).

# %%
import statistics

from fpie import data, metrics, runtime
from fpie.models import GeneratorConfig, enhance
from fpie.train import LogEntry, TrainConfig, train

ITERATIONS = 100
runtime.configure(threads=1, deterministic=True)

train_pairs = data.synthetic_pairs(256, 64, seed=0)
held_out = data.synthetic_pairs(16, 64, seed=1, spec=data.DegradeSpec(seed=256))
cfg = TrainConfig(iterations=ITERATIONS, batch_size=8, gen=GeneratorConfig.strided(3, 4, 16))

# %%
result = train(cfg, train_pairs)
totals = [e.losses.total for e in result.log]
window = min(50, len(totals) // 2)
print("first", statistics.fmean(totals[:window]), "last", statistics.fmean(totals[-window:]))
print("\t".join(LogEntry.HEADER))
for entry in result.log[:: max(1, ITERATIONS // 10)]:
    print(entry.line())

# %% [markdown]
# ## Held-out quality
#
# PSNR is reported over RGB and over luma. Desaturation leaves luma unchanged,
# so only the RGB score sees the color part of the restoration.

# %%
gen = result.generator.eval()
enhanced = [(enhance(gen, p.phone), p.dslr) for p in held_out]
degraded = [(p.phone, p.dslr) for p in held_out]
for mode in ("rgb", "luma"):
    print(mode, "degraded", metrics.evaluate(degraded, mode=mode).psnr_db,
          "enhanced", metrics.evaluate(enhanced, mode=mode).psnr_db)

# %%
data.write_png("enhanced_example.png", enhanced[0][0])
data.write_png("degraded_example.png", held_out[0].phone)
