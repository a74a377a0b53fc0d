# Default hyperparameters for every pipeline stage
from typing import Dict, Any

# Procedural world generation
WORLD_CONFIG = {
    "width": 40,
    "height": 40,
    "cell_size": 0.25,  # meters
    "rooms": 4,
    "min_room_size": 7,
    "max_room_size": 12,
    "object_density": 0.02,  # object instances per free room cell
    "corridor_width": 3,
    "max_retries": 50,
}

# Agent kinematics and raycast sensor
SENSOR_CONFIG = {
    "n_rays": 15,
    "fov_degrees": 90.0,
    "max_depth": 5.0,
    "robot_radius": 0.10,
    "forward_step": 0.25,
    "turn_degrees": 30,
    "n_headings": 12,
    "success_radius": 1.0,
}

# Synthetic video tours and random interaction data
VIDEO_CONFIG = {
    "n_traj_per_world": 50,
    "noise_p": 0.2,
    "min_target_distance": 2.0,
    "max_steps": 120,
    "stride": 1,
    "interaction_frames": 40000,
    "interaction_episode_length": 20,
}

# One-step inverse model
INVERSE_CONFIG = {
    "hidden_sizes": (128, 64),
    "epochs": 10,
    "batch_size": 64,
    "learning_rate": 1e-3,
    "val_fraction": 0.1,
    "min_transitions": 1000,
}

# Simulated detector and reward labeling
DETECTOR_CONFIG = {
    "p_false_neg": 0.10,
    "p_false_pos": 0.02,
    "confidence_noise_sigma": 0.05,
    "reward_percentile": 90.0,
    "reward_threshold": 0.5,
}

# Q-learning and the policy-evaluation / supervised baselines
QLEARN_CONFIG = {
    "gamma": 0.99,
    "batch_size": 16,
    "iterations": 50000,
    "sync_period": 2000,
    "hidden_sizes": (512, 256),
    "learning_rate": 1e-4,
    "holdout_fraction": 0.05,
    "tabular_tolerance": 1e-10,
    "tabular_max_sweeps": 5000,
    "td_alpha": 0.5,
    "td_passes": 400,
    "value_hidden_sizes": (128, 64),
    "strong_samples": 5000,
    "bc_hidden_sizes": (128, 64),
    "bc_suffix_length": 30,
    "bc_epochs": 20,
}

# Hierarchical navigation policy
NAV_CONFIG = {
    "lambdas": (1.0, 1.0, 1.0),
    "tau_c": 0.75,
    "default_d_c": 1.0,
    "d_c_grid": (0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0),
    "calibration_episodes": 100,
    "k_goals": 100,
    "sector_half_width_degrees": 7.0,
    "goal_min_radius": 1.0,
    "goal_max_radius": 2.0,
    "candidate_distance": 1.5,
    "budget": 500,
    "inflation_cells": 1,
    "goal_tolerance": 0.25,
    "timeout_factor": 1.5,
    "infeasible_factor": 2.0,
    "detection_gate": 0.5,
}

# Episode sampling and metrics
EVAL_CONFIG = {
    "n_per_class": 20,
    "bootstrap_samples": 1000,
    "ci_level": 0.90,
    "difficulty_edges": (3.0, 5.0, 15.0),
    "max_start_attempts": 20000,
    "fidelity_poses": 500,
}

# World splits for the full pipeline
SPLIT_CONFIG = {
    "n_train_worlds": 10,
    "n_video_worlds": 20,
    "n_test_worlds": 5,
}

# Branching-environment experiment
BRANCHING_CONFIG = {
    "corridor_len": 12,
    "branch_offset": 6,
    "mix": (0.50, 0.495, 0.005),
    "n_videos": 200,
    "n_rollouts": 50,
    "rollout_budget": 150,
}


def get_hyperparameters() -> Dict[str, Any]:
    """Get all default hyperparameter tables"""
    return {
        "world": WORLD_CONFIG,
        "sensor": SENSOR_CONFIG,
        "video": VIDEO_CONFIG,
        "inverse": INVERSE_CONFIG,
        "detector": DETECTOR_CONFIG,
        "qlearn": QLEARN_CONFIG,
        "nav": NAV_CONFIG,
        "eval": EVAL_CONFIG,
        "split": SPLIT_CONFIG,
        "branching": BRANCHING_CONFIG,
    }
