"""Small datasets, networks and configs shared by the test modules."""
import numpy as np

from factsim.config_models import HyperParams
from factsim.data import Dataset
from factsim.federation import ClientState, Role
from factsim.nn import ArchitectureSpec

CENTERS = np.array([[-2.0, 0.0], [2.0, 0.0], [0.0, 2.5]])

FAST_HYPER = HyperParams(eta0=0.01, batch_size=16, total_epochs=4, momentum=0.9, weight_decay=5e-4)


def blobs(n=40, seed=0, labeled=True, num_classes=2, spread=0.5, tag="blobs"):
    """Well separated Gaussian classes in the plane."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_classes
    features = CENTERS[labels] + spread * rng.standard_normal((n, 2))
    return Dataset(features, labels if labeled else None, tag, num_classes)


def small_spec(input_dim=2, num_classes=2, hidden=(6,), dropout=0.0):
    return ArchitectureSpec.reference(input_dim, num_classes, hidden, dropout)


def make_clients(n_sources=2, n=40, seed=0, sizes=None):
    """Fresh source clients s0..s{k-1} and an unlabeled target client t."""
    sizes = sizes or [n] * n_sources
    clients = [ClientState(f"s{i}", Role.SOURCE, blobs(sizes[i], seed + i, tag=f"s{i}"))
               for i in range(n_sources)]
    clients.append(ClientState("t", Role.TARGET, blobs(n, seed + 100, labeled=False, tag="t")))
    return clients


def synthetic_domain(name, rotation, seed, n_samples=90):
    return {"kind": "synthetic", "name": name, "transform": {"rotation_deg": rotation},
            "n_samples": n_samples, "seed": seed}


def tiny_config(**overrides):
    """Desk-scale config small enough for unit tests."""
    config = {
        "schema_version": 1,
        "domains": [
            synthetic_domain("a", 0.0, 1),
            synthetic_domain("b", 20.0, 2),
            synthetic_domain("t", 60.0, 3),
        ],
        "target_domain": "t",
        "variant": "fact",
        "protocol": {"rounds": 2, "epochs_src": 1, "epochs_ft": 1, "epochs_idd": 1},
        "hyper": {"eta0": 0.01, "batch_size": 32, "total_epochs": 4},
        "architecture": {"hidden": [8]},
        "repeats": 1,
        "seeds": [0],
    }
    config.update(overrides)
    return config


def without_idd_epochs(stage_epochs):
    """Wrap ProtocolConfig.stage_epochs so that every round runs 0 IDD epochs."""
    def forced(protocol, round_index):
        src, ft, _ = stage_epochs(protocol, round_index)
        return src, ft, 0
    return forced
