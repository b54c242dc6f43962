"""Scikit-learn-style wrapper around the self-supervised pipeline.

The estimator's fit(X) consumes unlabelled images plus an unpaired prior
of 2D poses; predict(X) returns the emergent 2D and 3D poses. Parameter
handling (get_params/set_params/clone) comes from sklearn's
BaseEstimator so the model composes with the wider ecosystem.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import evaluation, training
from .networks import NetworkConfig
from .skeleton import DEFAULT_SCENE_DEPTH, default_topology


class SelfSupervisedPoseEstimator(BaseEstimator):
    """Learns 2D/3D quadruped poses from unlabelled images and a 2D prior.

    Parameters mirror the training configuration; see
    :class:`quadpose.training.TrainConfig`.
    """

    def __init__(self, steps=1000, batch_size=16, lr_generator=2e-4,
                 lr_discriminator=2e-4, w_adv=1.0, w_gc=1.0, w_omega=1.0,
                 lambda_coeff=1.0, gamma=500.0, image_size=128,
                 base_channels=16, lifter_units=1024, lifter_blocks=2,
                 scene_depth=DEFAULT_SCENE_DEPTH, seed=0, out_dir=None):
        self.steps = steps
        self.batch_size = batch_size
        self.lr_generator = lr_generator
        self.lr_discriminator = lr_discriminator
        self.w_adv = w_adv
        self.w_gc = w_gc
        self.w_omega = w_omega
        self.lambda_coeff = lambda_coeff
        self.gamma = gamma
        self.image_size = image_size
        self.base_channels = base_channels
        self.lifter_units = lifter_units
        self.lifter_blocks = lifter_blocks
        self.scene_depth = scene_depth
        self.seed = seed
        self.out_dir = out_dir

    def _train_config(self) -> training.TrainConfig:
        return training.TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            lr_generator=self.lr_generator,
            lr_discriminator=self.lr_discriminator,
            w_adv=self.w_adv,
            w_gc=self.w_gc,
            w_omega=self.w_omega,
            lambda_coeff=self.lambda_coeff,
            gamma=self.gamma,
            scene_depth=self.scene_depth,
            seed=self.seed,
            network=NetworkConfig(
                image_size=self.image_size,
                base_channels=self.base_channels,
                lifter_units=self.lifter_units,
                lifter_blocks=self.lifter_blocks,
            ),
        )

    def fit(self, X, y=None, prior=None):
        """Train on unlabelled images X (N, H, W) in [0,1].

        ``prior`` (required) is a PriorSet or (M, J, 2) array of unpaired
        2D poses; ``y`` is ignored (the method is self-supervised).
        """
        if prior is None:
            raise ValueError("fit requires an unpaired 2D pose prior")
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 3:
            raise ValueError(f"X must be (N, H, W) grayscale images, got {X.shape}")
        out_dir = self.out_dir or tempfile.mkdtemp(prefix="quadpose_fit_")
        result = training.fit(
            self._train_config(),
            {"train_images": X, "prior": prior},
            out_dir)
        self.state_ = result["state"]
        self.checkpoint_path_ = Path(result["checkpoint"])
        self.topology_ = self.state_.topology
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError("fit the estimator before predicting")

    def predict(self, X):
        """Predicted 2D poses (N, J, 2) for images X."""
        return self.predict_poses(X)[0]

    def predict_poses(self, X):
        """Both outputs: ((N, J, 2) 2D poses, (N, J, 3) 3D poses)."""
        self._check_fitted()
        X = np.asarray(X, dtype=np.float32)
        return evaluation.predict_poses(self.state_.params, X, self.scene_depth)

    def transform(self, X):
        """Predicted skeleton images (N, H, W) for images X."""
        self._check_fitted()
        import torch

        X = np.asarray(X, dtype=np.float32)
        with torch.no_grad():
            s = self.state_.params.image_to_skeleton(
                torch.as_tensor(X).unsqueeze(1))
        return s.squeeze(1).numpy()

    def score(self, X, y):
        """Mean PCK@0.05 against ground-truth 2D poses y (N, J, 2)."""
        self._check_fitted()
        pred2d, _ = self.predict_poses(X)
        topology = self.topology_ or default_topology()
        report = evaluation.pck_report(
            [evaluation.subset_coords(p, topology) for p in pred2d],
            [evaluation.subset_coords(g, topology) for g in np.asarray(y)],
            topology=topology)
        return report.mean_rate
