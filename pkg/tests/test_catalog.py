import numpy as np
import pytest

from kcontact.catalog import (
    EventCatalog,
    read_catalog,
    read_previous_values,
    read_raster,
    write_catalog,
    write_raster,
)
from kcontact.errors import DataError
from kcontact.geometry import frb_domain, unit_square
from kcontact.noise import DegenerateNoise, GaussianNoise, GriddedNoise


def _frb_catalog():
    grid = GriddedNoise([-0.3, -0.2], [0.3, 0.2], np.arange(1.0, 13.0).reshape(3, 4), normalize=True)
    return EventCatalog(
        ids=["A", "B", "C"],
        observed=[[10.5, 45.2, 512.3], [11.0, 45.0, 700.0], [200.0, 10.0, 300.0]],
        position_noise=[GaussianNoise(0.2, 2), grid, DegenerateNoise(2)],
        domain=frb_domain(),
        dm_sigma=[1.2, 0.5, 2.0],
        labels=["pair", "pair", None],
        position_dims=(0, 1),
        dm_dim=2,
    )


def test_catalog_roundtrip(tmp_path):
    cat = _frb_catalog()
    write_catalog(tmp_path / "cat.tsv", cat)
    back = read_catalog(tmp_path / "cat.tsv", frb_domain())
    assert back.ids == cat.ids and np.array_equal(back.observed, cat.observed)
    assert np.array_equal(back.dm_sigma, cat.dm_sigma)
    assert back.clusters() == {"pair": [0, 1]}
    assert isinstance(back.position_noise[1], GriddedNoise)
    assert np.allclose(back.position_noise[1].weights, cat.position_noise[1].weights)
    assert back.position_noise[2].is_degenerate
    assert back.digest() == cat.digest()
    assert (tmp_path / "cat_maps" / "B.raster").exists()


def test_full_noise_is_product():
    cat = _frb_catalog()
    e = np.array([0.1, -0.05, 0.7])
    expected = GaussianNoise(0.2, 2).log_density(e[:2]) + GaussianNoise(1.2).log_density(e[2:])
    assert cat.noise(0).log_density(e) == pytest.approx(expected)


def test_raster_roundtrip_and_normalization(tmp_path):
    g = GriddedNoise([0, 0], [1, 2], np.array([[1.0, 3.0], [0.0, 4.0]]), normalize=True)
    write_raster(tmp_path / "m.raster", g)
    back = read_raster(tmp_path / "m.raster")
    assert back.weights.sum() == pytest.approx(1.0)
    assert np.allclose(back.weights, g.weights)


@pytest.mark.parametrize("text", ["#kcontact-raster v2\nlower 0\nupper 1\nshape 1\n1\n",
                                  "#kcontact-raster v1\nlower 0\nupper 1\nshape 2\n1\n"])
def test_bad_raster(tmp_path, text):
    (tmp_path / "bad.raster").write_text(text)
    with pytest.raises(DataError):
        read_raster(tmp_path / "bad.raster")


def test_catalog_version_and_errors(tmp_path):
    (tmp_path / "a.tsv").write_text("#kcontact-catalog v0\n#dims=x,y\nid:str\n")
    with pytest.raises(DataError):
        read_catalog(tmp_path / "a.tsv", unit_square())
    with pytest.raises(DataError):
        read_catalog(tmp_path / "missing.tsv", unit_square())
    with pytest.raises(DataError):
        EventCatalog(["a", "a"], [[0.1, 0.1], [0.2, 0.2]], [DegenerateNoise(2)] * 2, unit_square())
    with pytest.raises(DataError):
        EventCatalog(["a"], [[1.5, 0.1]], [DegenerateNoise(2)], unit_square())


def test_catalog_field_count_error(tmp_path):
    cat = EventCatalog(["a"], [[0.1, 0.2]], [GaussianNoise(0.01, 2)], unit_square())
    write_catalog(tmp_path / "c.tsv", cat)
    text = (tmp_path / "c.tsv").read_text().rstrip("\n") + "\tEXTRA\n"
    (tmp_path / "c.tsv").write_text(text)
    with pytest.raises(DataError):
        read_catalog(tmp_path / "c.tsv", unit_square())


def test_previous_values(tmp_path):
    (tmp_path / "p.tsv").write_text("id\tvalue\nA\t1e-3\nB\t0.5\n")
    assert read_previous_values(tmp_path / "p.tsv") == {"A": 1e-3, "B": 0.5}
    (tmp_path / "q.tsv").write_text("A 1 2\n")
    with pytest.raises(DataError):
        read_previous_values(tmp_path / "q.tsv")
