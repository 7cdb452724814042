"""Streaming test-time improvement of a frozen promptable segmenter.

A small trainable specialist runs on prompt-derived crops next to a
frozen generalist; their logit maps are fused with an adaptively
estimated scalar weight, and the specialist learns online from human
(or simulated) rectifications through a loss-prioritized bounded batch.
"""

__version__ = "0.1.0"
