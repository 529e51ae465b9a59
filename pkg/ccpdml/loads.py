"""
Resource loading utilities for the ccpdml package.

This module gives access to two kinds of inputs:

1. **Experiment presets**
   Flat key-value configuration files packaged with ccpdml under
   ``ccpdml/presets``. ``synth`` is the desk-scale default; ``mnist`` runs
   the 2-D MNIST study; ``cub``, ``cars196``, ``sop`` and ``inshop`` carry
   the proxy, pool and loss hyperparameters tuned for those benchmarks on top
   of the synthetic data.

2. **MNIST**
   The four standard IDX files (plain or gzip-compressed) found in a local
   directory. MNIST itself is not shipped with the package.
"""

import importlib.resources as resources
import logging
import os

from .data import load_idx, merge_test
from .errors import ConfigError

log = logging.getLogger(__name__)

MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def available_presets():
    """Names of the packaged experiment presets, sorted."""
    folder = resources.files("ccpdml").joinpath("presets")
    return sorted(entry.name[:-4] for entry in folder.iterdir() if entry.name.endswith(".cfg"))


def load_preset(name):
    """
    Return the text of a packaged experiment preset.

    Parameters
    ----------
    name : str
        Preset name without the ``.cfg`` suffix.

    Returns
    -------
    str

    Raises
    ------
    ConfigError
        If no preset of that name exists.
    """
    path = resources.files("ccpdml").joinpath(f"presets/{name}.cfg")
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(available_presets())}", key="extends")
    return path.read_text(encoding="utf-8")


def find_mnist(directory):
    """
    Locate the MNIST IDX files in ``directory``.

    Returns
    -------
    dict
        Keys ``train_images``, ``train_labels``, ``test_images``,
        ``test_labels``. Test entries are ``None`` when absent.

    Raises
    ------
    FileNotFoundError
        If the training images or labels are missing.
    """
    found = {}
    for role, stems in MNIST_FILES.items():
        found[role] = None
        for stem in stems:
            for suffix in ("", ".gz"):
                candidate = os.path.join(directory, stem + suffix)
                if os.path.isfile(candidate):
                    found[role] = candidate
                    break
            if found[role]:
                break
    for role in ("train_images", "train_labels"):
        if found[role] is None:
            raise FileNotFoundError(f"no {MNIST_FILES[role][0]}[.gz] in {directory}")
    return found


def load_mnist(directory):
    """
    Load MNIST from ``directory``, with the t10k files as test split when present.

    Returns
    -------
    Dataset
        Training images first; ``test_idx`` covers the appended test images.
    """
    files = find_mnist(directory)
    dataset = load_idx(files["train_images"], files["train_labels"])
    if files["test_images"] and files["test_labels"]:
        dataset = merge_test(dataset, load_idx(files["test_images"], files["test_labels"]))
    else:
        log.warning("no MNIST test files in %s; reporting validation metrics only", directory)
    return dataset
