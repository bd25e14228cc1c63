"""Data valuation for offline reinforcement learning at desk scale.

Modules:

* ``buffer``: transitions, replay buffers, batching and persistence;
* ``divergence``: comparison features and KL estimators;
* ``neural``: the value network and its REINFORCE surrogate gradient;
* ``dve``: value estimator training, valuation and filtering;
* ``envs``: toy domains with dynamics shift and behaviour data;
* ``offline``: tabular FQI / discrete BCQ and policy evaluation;
* ``pipeline``: config-driven experiments; ``cli`` wraps it.
"""

__version__ = "0.1.0"
