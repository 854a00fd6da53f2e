"""scikit-learn style front-ends: :class:`UDGAN` and :class:`PairMiner`."""
from __future__ import annotations

import copy
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted
from torch.utils.data import Dataset

from . import trainer
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .metrics import EvalReport, embed, evaluate_embeddings
from .mining import mine_pairs, validate_mining
from .networks import GeneratedQuad, UDGANNet, encode_identity, swap_generate
from .validation import (ImageLabelDataset, check_embeddings, check_images, check_labels,
                         encode_labels)


def _as_dataset(X, y=None, image_size=None, name="X"):
    if isinstance(X, Dataset) and not isinstance(X, torch.Tensor):
        if len(X) == 0:
            raise ValueError(f"{name} is empty")
        return X, None
    X = check_images(X, image_size, name)
    if y is None:
        return ImageLabelDataset(X), None
    classes, dense = encode_labels(check_labels(y, len(X)))
    return ImageLabelDataset(X, dense), classes


class UDGAN(BaseEstimator, TransformerMixin):
    """Domain-adaptive re-identification encoder trained with feature-swap generation.

    ``fit`` runs all three stages when target images are given, otherwise
    only source pretraining. ``transform`` maps images to identity codes.

    Parameters
    ----------
    config : TrainConfig, optional
        Full training configuration; defaults to the full-scale settings.
    backbone : Backbone, optional
        Replacement for the reference trunk (copied before use).
    """

    def __init__(self, config: Optional[TrainConfig] = None, backbone=None):
        self.config = config
        self.backbone = backbone

    def _config(self) -> TrainConfig:
        return (self.config or TrainConfig()).validate()

    def fit(self, X_source, y_source=None, X_target=None):
        self.fit_stage1(X_source, y_source)
        if X_target is not None:
            self.fit_stage2(X_target)
            self.fit_stage3(X_source, y_source, X_target)
        return self

    def fit_stage1(self, X, y=None):
        cfg = self._config()
        ds, classes = _as_dataset(X, y, cfg.image_size)
        if classes is None:
            labels = np.array([ds[i][1] for i in range(len(ds))])
            if labels.min() < 0:
                raise ValueError("stage 1 needs labelled images")
            classes = np.unique(labels)
        backbone = copy.deepcopy(self.backbone) if self.backbone is not None else None
        net = UDGANNet(cfg, len(classes), backbone=backbone)
        res = trainer.run_stage1(cfg, ds, len(classes), net)
        self.config_ = cfg
        self.net_ = res.net
        self.classes_ = classes
        self.stage_ = 1
        self.history_ = list(res.rows)
        self.train_accuracy_ = res.train_accuracy
        self.judge_ = copy.deepcopy(res.net).eval()
        return self

    def fit_stage2(self, X_target):
        check_is_fitted(self, "net_")
        ds, _ = _as_dataset(X_target, None, self.config_.image_size, "X_target")
        res = trainer.run_stage2(self.config_, self.net_, ds)
        self.pairs_ = res.pairs
        self.mining_report_ = res.mining_report
        self.history_ += res.rows
        self.stage_ = 2
        return self

    def fit_stage3(self, X_source, y_source, X_target):
        check_is_fitted(self, "pairs_")
        src, _ = _as_dataset(X_source, y_source, self.config_.image_size, "X_source")
        tgt, _ = _as_dataset(X_target, None, self.config_.image_size, "X_target")
        res = trainer.run_stage3(self.config_, self.net_, src, tgt, self.pairs_)
        self.history_ += res.rows
        self.stage_ = 3
        return self

    def transform(self, X, batch_size: int = 128) -> np.ndarray:
        """Identity codes ``[N, d]`` (deterministic, evaluation mode)."""
        check_is_fitted(self, "net_")
        X = check_images(X, self.config_.image_size)
        self.net_.eval()
        return embed(lambda x: encode_identity(self.net_, x), X, batch_size)

    def predict(self, X) -> np.ndarray:
        """Source identity labels from the stage-1 classifier."""
        check_is_fitted(self, "net_")
        X = check_images(X, self.config_.image_size)
        self.net_.eval()
        with torch.no_grad():
            logits = self.net_.classifier(encode_identity(self.net_, X))
        return self.classes_[logits.argmax(1).numpy()]

    def generate_swaps(self, X1, X2) -> GeneratedQuad:
        """All four identity/content swaps, decoded from the content means."""
        check_is_fitted(self, "net_")
        X1 = check_images(X1, self.config_.image_size, "X1")
        X2 = check_images(X2, self.config_.image_size, "X2")
        self.net_.eval()
        zero = torch.zeros(len(X1), self.net_.dim)
        with torch.no_grad():
            return swap_generate(self.net_, X1, X2, noise=zero)

    def evaluate(self, X_query, ids_query, cams_query, X_gallery, ids_gallery,
                 cams_gallery) -> EvalReport:
        return evaluate_embeddings(self.transform(X_query), ids_query, cams_query,
                                   self.transform(X_gallery), ids_gallery, cams_gallery)

    def save(self, path):
        check_is_fitted(self, "net_")
        save_checkpoint(path, self.net_, self.config_, self.stage_,
                        {"classes": [int(c) for c in self.classes_]})
        return Path(path)

    @classmethod
    def load(cls, path, backbone=None) -> "UDGAN":
        net, cfg, stage, extra = load_checkpoint(path, backbone)
        est = cls(config=cfg, backbone=backbone)
        est.config_, est.net_, est.stage_ = cfg, net, stage
        est.classes_ = np.asarray(extra.get("classes", range(net.num_classes)))
        est.history_ = []
        return est


class PairMiner(BaseEstimator):
    """Same-identity pair mining over embeddings with a mutual top-``k`` filter.

    After ``fit``: ``pairs_`` (one :class:`MinedPair` per row), ``match_``
    (partner index per row, itself for self-pairs) and ``report_`` (with
    precision when labels ``y`` were supplied).
    """

    def __init__(self, k: int = 5):
        self.k = k

    def fit(self, X, y=None):
        E = check_embeddings(X)
        pairs, report = mine_pairs(E, self.k)
        if y is not None:
            report = validate_mining(pairs, check_labels(y, len(E)))
        self.pairs_ = pairs
        self.report_ = report
        self.match_ = np.array([p.match_index for p in pairs])
        self.n_features_in_ = E.shape[1]
        return self

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit(X, y).match_
