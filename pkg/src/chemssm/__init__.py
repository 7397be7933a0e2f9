"""Surrogate models for stiff chemical kinetics built on selective state-space layers.

The package is organised around a small numpy-backed autodiff engine
(:mod:`chemssm.tensor`), the state-space architecture (:mod:`chemssm.ssm`),
data preparation (:mod:`chemssm.pipeline`, :mod:`chemssm.simplex`,
:mod:`chemssm.pca`), stiff-ODE data generation (:mod:`chemssm.rosenbrock`,
:mod:`chemssm.datagen`), and the training / rollout / evaluation layers on top.
"""

__version__ = "0.1.0"
