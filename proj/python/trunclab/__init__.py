"""Loss-truncation training laboratory.

Thin python surface over the native core: corpus synthesis, overlap and
factuality metrics, the streaming truncation primitives, the seq2seq
trainer, and decoding. Heavier workflows (full runs, probing, reports)
live in the `trunclab` command line tool.
"""

from ._trunclab import *  # noqa: F401,F403

__version__ = "0.1.0"
