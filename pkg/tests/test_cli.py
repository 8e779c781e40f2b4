import json

import pytest

from egue import cli
from egue.ensembles import ModelSpec


CONSERVING = {"kind": "number_conserving", "N": 4, "m": 2, "k": 1, "t": 1}
REMOVAL = {"kind": "removal", "N": 6, "m": 3, "k": 2, "k0": 1}
BETA = {
    "kind": "beta_decay", "N1": 4, "N2": 4, "m1": 2, "m2": 2, "k": 2, "k0": 1,
    "v_h_ij": [
        {"i": 0, "j": 2, "v": 1.0},
        {"i": 1, "j": 1, "v": 1.0},
        {"i": 2, "j": 0, "v": 1.0},
    ],
}


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def run_json(tmp_path, args, payload):
    rc = cli.main(args + ["--config", write_config(tmp_path, payload)])
    return rc


class TestSpecConfig:
    @pytest.mark.parametrize("payload", [CONSERVING, REMOVAL, BETA])
    def test_round_trip(self, payload):
        spec = cli.spec_from_config(payload)
        again = cli.spec_from_config(cli.spec_to_config(spec))
        assert again == spec

    def test_defaults_applied(self):
        spec = cli.spec_from_config(CONSERVING)
        assert spec.v_h == 1.0 and spec.v_o == 1.0

    def test_beta_families_become_mapping(self):
        spec = cli.spec_from_config(BETA)
        assert spec.v_h_ij == {(0, 2): 1.0, (1, 1): 1.0, (2, 0): 1.0}

    def test_duplicate_family_rejected(self):
        payload = dict(BETA, v_h_ij=[
            {"i": 0, "j": 2, "v": 1.0},
            {"i": 0, "j": 2, "v": 2.0},
        ])
        with pytest.raises(Exception):
            cli.spec_from_config(payload)


class TestSchemaRejection:
    def test_unknown_key(self, tmp_path, capsys):
        assert run_json(tmp_path, ["moments"], dict(CONSERVING, banana=1)) == 2

    def test_irrelevant_field_for_kind(self, tmp_path):
        assert run_json(tmp_path, ["moments"], dict(REMOVAL, t=1)) == 2

    def test_beta_rejects_scalar_variance(self, tmp_path):
        assert run_json(tmp_path, ["moments"], dict(BETA, v_h=1.0)) == 2

    def test_unknown_kind(self, tmp_path):
        assert run_json(tmp_path, ["moments"], dict(CONSERVING, kind="mystery")) == 2

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert cli.main(["moments", "--config", str(path)]) == 2

    def test_invalid_rank(self, tmp_path):
        assert run_json(tmp_path, ["moments"], dict(CONSERVING, k=9)) == 2


class TestMoments:
    def test_stdout_json(self, tmp_path, capsys):
        assert run_json(tmp_path, ["moments"], CONSERVING) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["moments"]["M20"] == {"value": 36, "flag": "exact"}
        assert out["moments"]["M22"]["flag"] == "partial"
        assert out["cumulants"]["xi"] == pytest.approx(4 / 9)

    def test_removal_marks_oracle_only(self, tmp_path, capsys):
        assert run_json(tmp_path, ["moments"], REMOVAL) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["moments"]["M11"] == {"value": None, "flag": "oracle-only"}
        assert out["moments"]["M40"]["flag"] == "exact"

    def test_csv_and_json_agree(self, tmp_path, capsys):
        cfg = write_config(tmp_path, CONSERVING)
        outdir = tmp_path / "out"
        rc = cli.main(["moments", "--config", cfg, "--format", "both",
                       "--out", str(outdir)])
        assert rc == 0
        data = json.loads((outdir / "moments.json").read_text())
        lines = (outdir / "moments.csv").read_text().strip().splitlines()
        header = lines[0].split(",")
        by_key = {row.split(",")[0]: dict(zip(header, row.split(","))) for row in lines[1:]}
        for key in ("M20", "M11", "M40"):
            assert float(by_key[key]["value"]) == data["moments"][key]["value"]


class TestOracleCommand:
    def test_exact_m22_and_racah(self, tmp_path, capsys):
        assert run_json(tmp_path, ["oracle", "--racah"], CONSERVING) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["moments"]["M22"] == {"value": 288, "flag": "exact"}
        assert out["racah"]["w3"] == 576
        assert out["racah"]["table"]["0"] == 576

    def test_racah_needs_conserving_kind(self, tmp_path):
        assert run_json(tmp_path, ["oracle", "--racah"], REMOVAL) == 2

    def test_max_dim_cap(self, tmp_path):
        payload = dict(CONSERVING, N=12, m=6, k=2, t=2)
        rc = cli.main(["oracle", "--config", write_config(tmp_path, payload),
                       "--max-dim", "100"])
        assert rc == 3


class TestVerify:
    def test_small_grid_passes(self, tmp_path, capsys):
        payload = {"grid": [CONSERVING,
                            dict(CONSERVING, N=5, k=2, v_h=2.0, v_o=0.5)]}
        assert run_json(tmp_path, ["verify"], payload) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["n_specs"] == 2 and out["n_failures"] == 0
        assert all(e["status"] == "pass" for e in out["entries"])

    def test_infeasible_entry_reported(self, tmp_path, capsys):
        payload = {"grid": [CONSERVING, dict(CONSERVING, N=30, m=15)]}
        assert run_json(tmp_path, ["verify"], payload) == 3
        out = json.loads(capsys.readouterr().out)
        statuses = {e["status"] for e in out["entries"]}
        assert statuses == {"pass", "infeasible"}

    def test_detects_injected_error(self, tmp_path, capsys, monkeypatch):
        import egue.analytic

        real = egue.analytic.m31
        monkeypatch.setattr(egue.analytic, "m31",
                            lambda *a, **kw: real(*a, **kw) + 1.0)
        payload = {"grid": [CONSERVING]}
        assert run_json(tmp_path, ["verify"], payload) == 4
        out = json.loads(capsys.readouterr().out)
        bad = [c for c in out["entries"][0]["checks"] if not c["pass"]]
        assert bad and all(c["moment"] == "M31" for c in bad)

    def test_unknown_grid_key(self, tmp_path):
        assert run_json(tmp_path, ["verify"], {"grid": [], "extra": 1}) == 2


class TestSample:
    def test_writes_three_files(self, tmp_path):
        cfg = write_config(tmp_path, CONSERVING)
        outdir = tmp_path / "run1"
        rc = cli.main(["sample", "--config", cfg, "--samples", "20",
                       "--seed", "5", "--bins", "9", "--out", str(outdir)])
        assert rc == 0
        for name in ("stats.json", "histogram.csv", "gaussian.csv"):
            assert (outdir / name).exists()
        stats = json.loads((outdir / "stats.json").read_text())
        assert stats["histogram"]["sum_rule_dev"] <= 1e-10
        assert stats["stats"]["n_samples"] == 20

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, CONSERVING)
        dirs = []
        for label in ("a", "b"):
            outdir = tmp_path / label
            rc = cli.main(["sample", "--config", cfg, "--samples", "12",
                           "--seed", "3", "--bins", "7", "--out", str(outdir)])
            assert rc == 0
            dirs.append(outdir)
        for name in ("stats.json", "histogram.csv", "gaussian.csv"):
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


class TestSweep:
    def test_ladder(self, tmp_path, capsys):
        payload = dict(CONSERVING, sweep={"vary": "N", "values": [5, 6, 7]})
        del payload["N"]
        assert run_json(tmp_path, ["sweep"], payload) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["vary"] == "N"
        assert [p["N"] for p in out["points"]] == [5, 6, 7]
        xi_inf = out["points"][0]["xi_inf"]
        devs = [abs(p["xi"] - xi_inf) for p in out["points"]]
        assert devs == sorted(devs, reverse=True)

    def test_swept_field_must_be_absent(self, tmp_path):
        payload = dict(CONSERVING, sweep={"vary": "N", "values": [5]})
        assert run_json(tmp_path, ["sweep"], payload) == 2

    def test_conserving_only(self, tmp_path):
        payload = dict(REMOVAL, sweep={"vary": "N", "values": [6]})
        assert run_json(tmp_path, ["sweep"], payload) == 2


def test_dumps_is_stable():
    a = cli.dumps({"b": 1.5, "a": [1, 2], "c": {"y": None, "x": True}})
    b = cli.dumps({"c": {"x": True, "y": None}, "a": [1, 2], "b": 1.5})
    assert a == b


def test_spec_to_config_orders_beta_families():
    spec = cli.spec_from_config(BETA)
    assert isinstance(spec, ModelSpec)
    cfg = cli.spec_to_config(spec)
    pairs = [(e["i"], e["j"]) for e in cfg["v_h_ij"]]
    assert pairs == sorted(pairs)
