"""Smoke test for the specbio_py extension. Run with pytest or directly."""

import math

import specbio_py as sb


def test_fit_and_round_trip(tmp_path):
    cohort = sb.Cohort([[1, 2], [2, 4], [3, 3]], ["glucose", "insulin"], ["P1", "P2", "P3"])
    model = sb.Model.fit(cohort)
    assert model.names == ["glucose", "insulin"]
    assert model.means == [2.0, 3.0]
    assert abs(model.eigenvalues[0] - 1.0) < 1e-12
    assert abs(model.eigenvalues[1] - 1.0 / 3.0) < 1e-12
    path = tmp_path / "m.json"
    model.save(str(path))
    again = sb.Model.load(str(path), gamma=2 / 3)
    assert again.hamiltonian == model.hamiltonian


def test_fingerprint_and_transfer():
    healthy = sb.Model.fit(sb.regime_cohort("healthy_coordination", seed=1))
    gain = sb.Model.fit(sb.regime_cohort("gain_of_coordination", seed=2))
    report = sb.fingerprint(healthy, gain)
    assert report["phi"] > 0
    diag = sb.transfer(healthy, healthy)
    assert diag["principal_angles"] == [0.0]
    assert diag["verdict"] == "well_conditioned"


def test_score_matches_likelihood_ratio():
    model = sb.Model.fit(sb.spiked_cohort([2.0], seed=3))
    scorer = sb.Scorer(model)
    diffs = []
    for k in range(5):
        x = [math.sin(k + j) for j in range(model.dim)]
        diffs.append(scorer.score(x) - scorer.llr(x))
    assert max(diffs) - min(diffs) < 1e-8


def test_thermo_and_reduce():
    model = sb.Model.fit(sb.regime_cohort("no_interdependency", seed=4, n=200, p=8))
    prof = sb.thermo(model, "log:0.1:10:5")
    assert len(prof["f_values"]) == 5
    assert all(f <= model.eigenvalues[0] + 1e-12 for f in prof["f_values"])
    cohort, summary = sb.two_group(seed=5)
    assert summary["auc"] >= 0.9
    assert len(sb.pca(cohort, 2)["values"]) == 2


def test_errors_are_typed():
    try:
        sb.Cohort([[1.0]], ["a"])
    except sb.InputError:
        pass
    else:
        raise AssertionError("expected InputError")
    assert issubclass(sb.CertificateError, sb.SpecbioError)


if __name__ == "__main__":
    import pathlib
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        test_fit_and_round_trip(pathlib.Path(d))
    test_fingerprint_and_transfer()
    test_score_matches_likelihood_ratio()
    test_thermo_and_reduce()
    test_errors_are_typed()
    print("ok")
