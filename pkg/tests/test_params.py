"""Parameter traversal and checkpoint serialization."""

from dataclasses import dataclass, field

import numpy as np
import pytest

from skelact import params as P
from skelact.tensor import Parameter


@dataclass
class Inner:
    w: Parameter
    extras: list = field(default_factory=list)


@dataclass
class Outer:
    a: Parameter
    inner: Inner


def make_tree(rng):
    return Outer(a=P.rand_param(rng, (2, 3)),
                 inner=Inner(w=P.rand_param(rng, (3,)),
                             extras=[P.zeros_param((2,)), P.ones_param((1,))]))


def test_iter_named_parameters_paths():
    tree = make_tree(np.random.default_rng(0))
    names = [n for n, _ in P.iter_named_parameters(tree)]
    assert names == ["a", "inner.w", "inner.extras[0]", "inner.extras[1]"]


def test_assign_names_stamps_paths():
    tree = P.assign_names(make_tree(np.random.default_rng(1)))
    assert tree.inner.extras[1].name == "inner.extras[1]"


def test_rand_param_fan_in_scaling():
    rng = np.random.default_rng(2)
    p = P.rand_param(rng, (400, 50))
    assert abs(p.data.std() - 1.0 / 20.0) < 0.005


def test_zero_grads():
    tree = make_tree(np.random.default_rng(3))
    tree.a.grad += 1.0
    P.zero_grads(tree)
    assert np.all(tree.a.grad == 0.0)


def test_checkpoint_round_trip_exact(tmp_path):
    rng = np.random.default_rng(4)
    tree = P.assign_names(make_tree(rng))
    path = tmp_path / "ckpt.json"
    P.save_checkpoint(tree, path)
    other = P.assign_names(make_tree(np.random.default_rng(99)))
    P.load_checkpoint(other, path)
    for (n1, p1), (n2, p2) in zip(P.iter_named_parameters(tree),
                                  P.iter_named_parameters(other)):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data)


def test_checkpoint_name_mismatch_rejected(tmp_path):
    rng = np.random.default_rng(5)
    tree = P.assign_names(make_tree(rng))
    path = tmp_path / "ckpt.json"
    P.save_checkpoint(tree, path)
    smaller = P.assign_names(Outer(a=P.rand_param(rng, (2, 3)),
                                   inner=Inner(w=P.rand_param(rng, (3,)))))
    with pytest.raises(ValueError, match="mismatch"):
        P.load_checkpoint(smaller, path)


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    rng = np.random.default_rng(6)
    tree = P.assign_names(make_tree(rng))
    path = tmp_path / "ckpt.json"
    P.save_checkpoint(tree, path)
    other = P.assign_names(make_tree(rng))
    other.a.data = np.zeros((3, 2))
    with pytest.raises(ValueError, match="shape"):
        P.load_checkpoint(other, path)
