"""
Wire-wrapped cams: forward wire model and cam synthesis.
"""

from rrr_balance_study.wirecam.profile import (
    CamProfile,
    Tangency,
    WireCamGeometry,
    WireCase,
    cam_torque_forward,
    wire_length,
    wire_tangency,
)
from rrr_balance_study.wirecam.synthesis import (
    CamDesign,
    ModalTorque,
    balance_with_cams,
    cam_angle,
    cam_joint_torque,
    design_cam,
    design_cams,
    desired_cam_torque,
    fit_modal_torque,
    size_spring_constant,
    synthesize_cam_profile,
)

__all__ = [
    "CamDesign",
    "CamProfile",
    "ModalTorque",
    "Tangency",
    "WireCamGeometry",
    "WireCase",
    "balance_with_cams",
    "cam_angle",
    "cam_joint_torque",
    "cam_torque_forward",
    "design_cam",
    "design_cams",
    "desired_cam_torque",
    "fit_modal_torque",
    "size_spring_constant",
    "synthesize_cam_profile",
    "wire_length",
    "wire_tangency",
]
