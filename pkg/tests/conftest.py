import numpy as np
import pytest

from agp.dataset import build_index, load_image, normalize_center, rasterize, to_point_cloud
from agp.prototype import build_agp
from agp.synthetic import write_corpus


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root, n_alphabets=3, n_characters=6, n_instances=4, seed=0)
    return root


@pytest.fixture(scope="session")
def index(corpus):
    return build_index(corpus)


@pytest.fixture(scope="session")
def glyph(index):
    """One binary character image from the synthetic corpus."""
    return load_image(index.instances[index.all_classes()[0]][0])


def toy_rasters(index, n_classes=2, per_class=100, k=8):
    """28x28 prototype rasters for the first ``n_classes`` corpus classes."""
    data, labels = [], []
    for ci, c in enumerate(index.all_classes()[:n_classes]):
        pc = normalize_center(to_point_cloud(load_image(index.instances[c][0])), 105)
        for j in range(per_class):
            data.append(rasterize(build_agp(pc, k, 300, seed=ci * 1000 + j).points, 28))
            labels.append(ci)
    return np.array(data, dtype=np.float32), np.array(labels)
