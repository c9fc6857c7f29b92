"""Python access to the kvconsist C++ core."""

import json

from . import _kvconsist
from ._kvconsist import KvError, cohen_kappa, fit_polynomial, fleiss_kappa

LABELS = ("ENTAILED", "CONTRADICTED", "IRRELEVANT")

__all__ = [
    "LABELS",
    "KvError",
    "Model",
    "cohen_kappa",
    "evaluate",
    "fit_polynomial",
    "fleiss_kappa",
    "generate",
    "joint_width",
    "load_dataset",
    "rerank",
    "save_dataset",
]


def generate(config=None, seed=None):
    """Synthetic corpus as {split: [example dict, ...]}.

    `config` is a run-config dict (model/train/gen sections) or None for defaults.
    """
    splits = _kvconsist.generate(json.dumps(config or {}), seed)
    return {name: [json.loads(line) for line in lines] for name, lines in splits.items()}


def load_dataset(path):
    return [json.loads(line) for line in _kvconsist.load_dataset(str(path))]


def save_dataset(examples, path):
    _kvconsist.save_dataset([json.dumps(ex) for ex in examples], str(path))


def joint_width(model_config):
    return _kvconsist.joint_width(json.dumps(model_config))


def evaluate(predicted, gold):
    return json.loads(_kvconsist.evaluate(list(predicted), list(gold)))


def rerank(candidates):
    """Reorder (response, prediction) pairs; prediction is a dict with label and probs."""
    candidates = list(candidates)
    keys = [(p["label"], [p["probs"][l] for l in LABELS]) for _, p in candidates]
    return [candidates[i] for i in _kvconsist.rerank_order(keys)]


class Model:
    def __init__(self, checkpoint_dir):
        self._m = _kvconsist.Model.load(str(checkpoint_dir))

    @property
    def mode(self):
        return self._m.mode

    @property
    def joint_width(self):
        return self._m.joint_width

    def predict(self, example, mode=""):
        return self._m.predict(json.dumps(example), mode)

    def accuracy(self, examples, mode=""):
        return self._m.accuracy([json.dumps(ex) for ex in examples], mode)
