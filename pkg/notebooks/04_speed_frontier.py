# %% [markdown]
# # Cost and speed of the two generator families
#
# The baseline generator runs every residual block at full resolution. The
# strided generator downsamples by 4 first, runs the blocks on 16x fewer
# pixels with 4x more channels, and upsamples with transposed convolutions.
# MAC counts are exact; times are medians of repeated single-thread runs.

# %%
from fpie import bench
from fpie.models import GeneratorConfig

baseline = GeneratorConfig.baseline(3, 64, 4)
strided = GeneratorConfig.strided(3, 4, 16)
for cfg in (baseline, strided):
    macs, params = bench.count_macs(cfg, bench.HD_SHAPE)
    print(f"{cfg.label:28s} {macs / 1e9:8.1f} GMAC  {params:7d} params  "
          f"{bench.peak_memory_bytes(cfg) / 2**20:7.0f} MB")

# %% [markdown]
# ## Per-layer breakdown of the strided model

# %%
for layer in bench.layer_plan(strided, bench.HD_SHAPE):
    print(f"{layer.name:18s} {layer.kind:5s} {layer.cin:3d}->{layer.cout:3d} k{layer.kernel} "
          f"{layer.in_hw} -> {layer.out_hw}  {layer.macs / 1e9:6.2f} GMAC")

# %% [markdown]
# ## Both grids, analytically

# %%
frontier = bench.frontier_report(bench.RESIDUAL_GRID + bench.STRIDED_GRID, macs_only=True)
print(frontier.table())

# %% [markdown]
# ## Timed frontier
#
# At 256x256 this takes a few seconds; pass `bench.HD_SHAPE` for the full
# 1280x720 frame (minutes for the baseline). `fpie bench grid.txt` does the
# same from the command line and writes `bench.tsv` and `bench.json`.

# %%
timed = bench.frontier_report([baseline, strided, GeneratorConfig.strided(4, 4, 32)],
                              shape=(1, 3, 256, 256), repeats=3)
print(timed.table())
print(timed.plot_data())
