"""opl: over-parameterized deep ReLU networks at desk scale.

Modules: netcore (networks and exact gradients), datagen (separated
datasets), theoryprobes (initialization and perturbation probes), ntk,
training, landscape, archext (convolutional and residual variants),
experiments and cli.  Submodules are imported on demand so the CLI can cap
BLAS threads before numpy loads.
"""

__version__ = "0.1.0"
