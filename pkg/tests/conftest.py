import numpy as np
import pytest

from certdp.cert import CertConfig, TamperMode, prover_certify, \
    run_local_session, verifier_certify
from certdp.commit import Dealer
from certdp.fxp import PROFILES
from certdp.scopt import Dataset


def make_separable(n, d, seed, frac_bits):
    rng = np.random.default_rng(seed)
    wstar = rng.normal(size=d)
    wstar /= np.linalg.norm(wstar)
    x = rng.random((n, d))
    y = np.where((x - 0.5) @ wstar > 0, 1, -1)
    return Dataset.from_features(x, y, frac_bits)


# parameter envelopes that fit each profile's field
TEST16_PARAMS = dict(eta=4.0, epsilon=64.0, delta=1e-3, profile="test16")
DEPLOY_TOY_PARAMS = dict(eta=0.25, epsilon=8.0, delta=1e-5, profile="deploy")


def run_session(n, d, backend, params, seed=0, tamper=TamperMode.NONE,
                dealer_seed=None, verifier_seed=None, **extra):
    """One in-process certification session; returns (prover, verifier)."""
    prof = PROFILES[params["profile"]]
    data = make_separable(n, d, seed, prof.frac_bits_data)
    pcfg = CertConfig(epsilon=params["epsilon"], delta=params["delta"],
                      eta=params["eta"], profile=params["profile"],
                      backend=backend, seed=seed, tamper=tamper, **extra)
    vcfg = CertConfig(epsilon=params["epsilon"], delta=params["delta"],
                      eta=params["eta"], profile=params["profile"],
                      backend=backend,
                      seed=seed if verifier_seed is None else verifier_seed,
                      **extra)
    dealer = Dealer(prof.p, seed=dealer_seed if dealer_seed is not None
                    else seed + 0xD)
    return run_local_session(
        lambda ch: prover_certify(data, pcfg, ch, dealer=dealer),
        lambda ch: verifier_certify(vcfg, n, d, ch, dealer=dealer))


@pytest.fixture(scope="session")
def sep_dataset_256_8():
    return make_separable(256, 8, 7, PROFILES["deploy"].frac_bits_data)
