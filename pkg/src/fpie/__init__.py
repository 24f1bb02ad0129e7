"""fpie: a numpy engine for fast photo-enhancement generators.

Modules, bottom up: ``tensor`` (arrays and seeded RNG), ``autodiff`` (tape),
``conv``/``ops``/``layers`` (differentiable operators), ``models`` (baseline
and strided generators, discriminator, feature extractors), ``losses``,
``metrics``, ``data``, ``train``, ``bench`` and the ``cli``.
"""

__version__ = "0.1.0"
