# %% [markdown]
# # The four training losses
#
# The generator minimizes a weighted sum of four terms. Content and texture
# compare what the images look like (deep features, and a discriminator's
# verdict on grayscale versions). Color and total variation keep tones and
# smoothness in check. Default weights are 1, 0.4, 0.1 and 400.

# %%
import numpy as np

from fpie import losses, ops
from fpie.data import degrade, synthetic_image
from fpie.models import DiscriminatorConfig, build_discriminator, tiny_feature_extractor
from fpie.tensor import make_rng

rng = make_rng(0)
clean = synthetic_image(rng, 64)
pair = degrade(clean)
phone, dslr = pair.phone, pair.dslr

# %% [markdown]
# ## Color loss
#
# Both images are blurred with a wide Gaussian before comparing, so the loss
# sees brightness and tint while ignoring texture. Shifting every pixel by a
# constant moves it a lot; adding fine noise barely moves it.

# %%
kernel = ops.build_gaussian_kernel()
shifted = np.clip(dslr + 0.05, 0, 1)
noisy = np.clip(dslr + make_rng(1).normal(0, 0.05, dslr.shape), 0, 1).astype(np.float32)
print("phone  ", losses.color_loss(phone, dslr, kernel).item())
print("shifted", losses.color_loss(shifted, dslr, kernel).item())
print("noisy  ", losses.color_loss(noisy, dslr, kernel).item())

# %% [markdown]
# ## Content and TV losses
#
# Content compares feature maps of a fixed random conv stack (a VGG-19 weight
# file can be loaded instead). TV penalizes neighbouring-pixel differences.

# %%
fe = tiny_feature_extractor("relu3")
print("content(phone, dslr)", losses.content_loss(fe, phone, dslr).item())
print("content(dslr, dslr) ", losses.content_loss(fe, dslr, dslr).item())
print("tv(phone) vs tv(noisy)", losses.tv_loss(phone).item(), losses.tv_loss(noisy).item())

# %% [markdown]
# ## Texture loss and the total
#
# An untrained discriminator outputs about 0.5 on anything, so the generator's
# texture loss starts near log 2.

# %%
disc = build_discriminator(DiscriminatorConfig(), make_rng(2))
tex = losses.texture_loss_generator(disc, phone)
total, parts = losses.total_loss(losses.content_loss(fe, phone, dslr), tex,
                                 losses.color_loss(phone, dslr, kernel), losses.tv_loss(phone))
for name, value in parts.weighted.items():
    print(f"{name:8s} {value:.5f}")
print("total   ", parts.total)
