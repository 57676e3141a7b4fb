import math

import numpy as np
import pytest

from rainbowloc.config import (ConfigError, build_config, dbm_to_watts,
                               derive_grids, desk_scale_config,
                               paper_scale_config, parse_config_text,
                               rayleigh_distance, watts_to_dbm)

FULL = dict(carrier_freq_hz=28e9, bandwidth_hz=380.16e6,
            subcarrier_spacing_hz=240e3, num_antennas=256,
            num_subcarriers=1584, noise_psd_dbm_per_hz=-174.0,
            tx_power_dbm=40.0, range_min_m=5.0, range_max_m=300.0)


def test_full_scale_values_accepted():
    cfg = build_config(FULL)
    assert cfg.num_subcarriers == 1584
    assert cfg.antenna_spacing_m == pytest.approx(3e8 / 56e9)


def test_bandwidth_identity_derivation():
    raw = dict(FULL)
    del raw["bandwidth_hz"]
    cfg = build_config(raw)
    assert cfg.bandwidth_hz == pytest.approx(380.16e6, rel=1e-12)


def test_grid_mismatch_rejected():
    raw = dict(FULL, num_subcarriers=1583)
    with pytest.raises(ConfigError, match="bandwidth"):
        build_config(raw)


def test_missing_key_rejected():
    raw = dict(FULL)
    del raw["tx_power_dbm"]
    with pytest.raises(ConfigError, match="tx_power_dbm"):
        build_config(raw)


def test_non_numeric_rejected():
    with pytest.raises(ConfigError, match="not a number"):
        build_config(dict(FULL, tx_power_dbm="forty"))


def test_nonpositive_quantities_rejected():
    with pytest.raises(ConfigError):
        build_config(dict(FULL, range_min_m=-1.0,
                          bandwidth_hz=FULL["bandwidth_hz"]))
    with pytest.raises(ConfigError):
        build_config(dict(FULL, num_antennas=1))


def test_text_parsing_roundtrip():
    text = "\n".join(f"{k} = {v}" for k, v in FULL.items()) + "\n# comment\n"
    cfg = build_config(text)
    assert cfg.config_hash() == build_config(FULL).config_hash()


def test_text_parsing_bad_line():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("this is not a key value pair")


def test_subcarrier_frequencies():
    cfg = paper_scale_config()
    g = derive_grids(cfg)
    # direct evaluation of f_m = f_c + (2m-1-M)/2 * f_scs at m=1
    assert g.subcarrier_freqs_hz[0] == pytest.approx(27.81004e9, abs=1.0)
    # cross-check: band edges are (M-1) spacings apart
    span = g.subcarrier_freqs_hz[-1] - g.subcarrier_freqs_hz[0]
    assert span == pytest.approx(1583 * 240e3, rel=1e-12)
    steps = np.diff(g.subcarrier_freqs_hz)
    assert np.allclose(steps, 240e3, rtol=1e-12, atol=0.0)
    assert np.all(steps > 0)


def test_antenna_offsets_symmetric():
    cfg = build_config(dict(FULL, num_antennas=2))
    g = derive_grids(cfg)
    assert np.allclose(g.antenna_offsets, [-0.5, 0.5])
    for n in (3, 8, 256):
        g = derive_grids(build_config(dict(FULL, num_antennas=n)))
        assert abs(g.antenna_offsets.sum()) < 1e-9


def test_equal_power_split():
    cfg = paper_scale_config()
    g = derive_grids(cfg)
    amps2 = g.per_subcarrier_tx_amplitude ** 2
    assert np.allclose(amps2, amps2[0])
    assert amps2.sum() == pytest.approx(dbm_to_watts(40.0), rel=1e-12)


def test_noise_power_per_subcarrier():
    cfg = paper_scale_config()
    expected = 10 ** ((-174.0 - 30.0) / 10.0) * 240e3
    assert cfg.noise_power_per_subcarrier_w == pytest.approx(expected, rel=1e-12)


def test_dbm_conversion_roundtrip():
    for x in (-100.0, 0.0, 40.0):
        assert watts_to_dbm(dbm_to_watts(x)) == pytest.approx(x, abs=1e-12)


def test_rayleigh_distance_full_scale():
    assert rayleigh_distance(paper_scale_config()) == pytest.approx(348.35, abs=0.01)


def test_rayleigh_distance_two_elements():
    cfg = build_config(dict(FULL, num_antennas=2))
    lam = 3e8 / 28e9
    # aperture d = lambda/2, so 2 d^2 / lambda = lambda / 2
    assert rayleigh_distance(cfg) == pytest.approx(lam / 2.0, rel=1e-12)


def test_rayleigh_distance_quadratic_in_aperture():
    r1 = rayleigh_distance(build_config(dict(FULL, num_antennas=11)))
    r2 = rayleigh_distance(build_config(dict(FULL, num_antennas=21)))
    assert r2 == pytest.approx(4.0 * r1, rel=1e-12)


def test_hash_excludes_seed_only():
    a = desk_scale_config(rng_seed=0)
    b = desk_scale_config(rng_seed=99)
    c = desk_scale_config(tx_power_dbm=30.0)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_grids_immutable():
    g = derive_grids(desk_scale_config())
    with pytest.raises(ValueError):
        g.subcarrier_freqs_hz[0] = 0.0
