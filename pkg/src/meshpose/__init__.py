"""Pose transfer between shared-topology 3D meshes via cross-mesh attention.

Subpackages stay import-light; pull in what you need:

    meshpose.autodiff   tensor engine with reverse-mode differentiation
    meshpose.mesh       mesh type, OBJ I/O, topology queries
    meshpose.losses     training objectives and the evaluation metric
    meshpose.model      encoder / attention decoder network and checkpoints
    meshpose.synthdata  procedural articulated-body dataset generator
    meshpose.training   optimizer, training loop, evaluation
    meshpose.lir        latent-code regularization of a target mesh set
    meshpose.gradcheck  finite-difference verification suites
"""

__version__ = "0.1.0"
