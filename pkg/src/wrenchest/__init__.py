"""wrenchest: sensorless end-effector wrench estimation testbed.

Subpackages: dyncore (rigid-body model and dynamics), observer
(momentum-based residual and wrench mapping), identify (dynamic
parameter identification), simworld (ground-truth simulation and
sensor models), datagen (dataset generation), learn (MLP wrench
estimator), harness (force-task experiments, reports, CLI).
"""

__version__ = "0.1.0"


def reference_model_path() -> str:
    """Path of the packaged reference arm model file."""
    from importlib.resources import files
    return str(files("wrenchest").joinpath("data/reference_arm.model"))


def load_reference_model():
    from .dyncore import load_robot_model
    return load_robot_model(reference_model_path())
