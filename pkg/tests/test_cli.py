import hashlib
import json
import os
import socket
import subprocess
import sys

import pytest
import requests

from jamaica.cli import main, run_replay
from jamaica.ingest import read_archive, write_archive
from jamaica.synth import SynthSpec, generate

from serve_proc import Serve, free_port


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_cli(*args, env=None, timeout=60):
    return subprocess.run([sys.executable, "-m", "jamaica", *args], capture_output=True,
                          text=True, timeout=timeout, env={**os.environ, **(env or {})})


class TestSynth:
    def test_counts(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path)]) == 0
        info = json.loads(capsys.readouterr().out)
        assert (info["n_negative"], info["n_high"]) == (2000, 1200)
        stream = read_archive(tmp_path / "stream.csv")
        train = read_archive(tmp_path / "train.csv")
        assert len(train) == 1000 and all(5 <= o.value <= 45 for o in train)
        assert len(stream) == 40000
        assert sum(o.value < 0 for o in stream) == 2000
        assert sum(o.value > 50 for o in stream) == 1200
        assert all(-10 <= o.value <= -0.1 or 5 <= o.value <= 45 or 50 < o.value <= 100
                   for o in stream)

    def test_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert main(["synth", "--out", str(tmp_path / d), "--n-stream", "5000"]) == 0
        for f in ("train.csv", "stream.csv"):
            assert sha(tmp_path / "a" / f) == sha(tmp_path / "b" / f)
        main(["synth", "--out", str(tmp_path / "c"), "--n-stream", "5000", "--seed", "7"])
        assert sha(tmp_path / "a" / "stream.csv") != sha(tmp_path / "c" / "stream.csv")

    def test_bad_spec(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--frac-negative", "0.6",
                     "--frac-high", "0.5"]) == 2

    def test_interarrival(self):
        _, stream = generate(SynthSpec(n_stream=2000))
        gaps = {b.timestamp - a.timestamp for a, b in zip(stream, stream[1:])}
        assert gaps == {150_000}


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    main(["synth", "--out", str(out)])
    return out


class TestReport:
    def test_training_histogram(self, files, capsys):
        assert main(["report", "histogram", "--source", str(files / "train.csv"),
                     "--bins", "10", "--band", "0", "50"]) == 0
        captured = capsys.readouterr()
        lines = captured.out.splitlines()
        assert lines[0] == "bin_low,bin_high,count" and len(lines) == 11
        assert sum(int(line.split(",")[2]) for line in lines[1:]) == 1000
        assert json.loads(captured.err) == {"total": 1000, "below": 0, "above": 0}

    def test_stream_summary(self, files, capsys):
        assert main(["report", "summary", "--source", str(files / "stream.csv"),
                     "--band", "0", "50"]) == 0
        s = json.loads(capsys.readouterr().out)
        assert (s["total"], s["below"], s["above"]) == (40000, 2000, 1200)

    def test_zero_bins_is_usage_error(self, files):
        with pytest.raises(SystemExit) as err:
            main(["report", "histogram", "--source", str(files / "train.csv"), "--bins", "0"])
        assert err.value.code == 2

    def test_empty_source(self, tmp_path):
        path = tmp_path / "e.csv"
        write_archive(path, [])
        assert main(["report", "histogram", "--source", str(path)]) == 1


@pytest.fixture
def pm10(live_factory):
    srv = live_factory()
    base = srv.url
    dom = requests.post(f"{base}/v1/tagdomains",
                        json={"name": "anomalies", "tags": ["anomalous", "normal"]}).json()
    job = requests.post(f"{base}/v1/jobs", json={
        "name": "pm10", "kind": "anomaly",
        "query": {"entity_type": "AirQualityObserved", "id_pattern": "urn:oc:e:london:*",
                  "attribute": "PM10"},
        "tag_domain_id": dom["id"], "mapping": {"anomalous_tag_id": dom["tag_ids"][0]},
        "detector": {"type": "range", "low": 0, "high": 50}}).json()
    requests.post(f"{base}/v1/jobs/{job['id']}/train", json={"samples": []})
    return srv, job


class TestReplay:
    def test_counts_match_ground_truth(self, pm10, tmp_path):
        srv, job = pm10
        requests.post(f"{srv.url}/v1/jobs/{job['id']}/start")
        _, stream = generate(SynthSpec(n_stream=3000))
        path = tmp_path / "s.csv"
        write_archive(path, stream)
        report = run_replay(srv.addr, str(path), job["id"], batch_size=250)
        expected = sum(not 0 <= o.value <= 50 for o in stream)
        assert report["observations"] == report["ingested"] == 3000
        assert report["annotations"] == {"anomalous": expected, "normal": 0}
        assert expected == 150 + 90

    def test_empty_archive(self, pm10, tmp_path, capsys):
        srv, job = pm10
        requests.post(f"{srv.url}/v1/jobs/{job['id']}/start")
        path = tmp_path / "e.csv"
        write_archive(path, [])
        assert main(["--addr", srv.addr, "replay", str(path), "--job", job["id"]]) == 0
        assert json.loads(capsys.readouterr().out)["observations"] == 0

    def test_stopped_job(self, pm10, tmp_path):
        srv, job = pm10
        path = tmp_path / "e.csv"
        write_archive(path, [])
        assert main(["--addr", srv.addr, "replay", str(path), "--job", job["id"]]) == 5

    def test_unreachable(self, tmp_path):
        path = tmp_path / "e.csv"
        write_archive(path, [])
        assert main(["--addr", f"127.0.0.1:{free_port()}", "replay", str(path),
                     "--job", "x"]) == 4


class TestResourceCommands:
    def test_domain_job_annotations(self, live_factory, tmp_path, capsys):
        srv = live_factory()
        dom_file = tmp_path / "dom.json"
        dom_file.write_text(json.dumps({"name": "anomalies", "tags": ["anomalous"]}))
        assert main(["--addr", srv.addr, "domain", "create", "-f", str(dom_file)]) == 0
        dom = json.loads(capsys.readouterr().out)
        spec = tmp_path / "job.json"
        spec.write_text(json.dumps({
            "name": "j", "kind": "anomaly", "query": {"attribute": "PM10"},
            "tag_domain_id": dom["id"], "mapping": {"anomalous_tag_id": dom["tag_ids"][0]},
            "detector": {"type": "lof", "k": 5}}))
        assert main(["--addr", srv.addr, "job", "create", "-f", str(spec)]) == 0
        job = json.loads(capsys.readouterr().out)
        train, _ = generate(SynthSpec(n_stream=10))
        csv_path = tmp_path / "train.csv"
        write_archive(csv_path, train)
        assert main(["--addr", srv.addr, "job", "train", job["id"], "--csv", str(csv_path)]) == 0
        assert json.loads(capsys.readouterr().out)["trained_count"] == 1000
        assert main(["--addr", srv.addr, "job", "start", job["id"]]) == 0
        assert json.loads(capsys.readouterr().out)["state"] == "running"
        assert main(["--addr", srv.addr, "job", "start", job["id"]]) == 1
        capsys.readouterr()
        assert main(["--addr", srv.addr, "job", "list"]) == 0
        assert json.loads(capsys.readouterr().out)["total"] == 1
        assert main(["--addr", srv.addr, "annotations", "query", "--tag",
                     dom["tag_ids"][0]]) == 0
        assert json.loads(capsys.readouterr().out)["total"] == 0
        assert main(["--addr", srv.addr, "job", "delete", job["id"]]) == 0
        assert main(["--addr", srv.addr, "job", "get", job["id"]]) == 1

    def test_job_create_needs_file(self, live_factory):
        assert main(["--addr", live_factory().addr, "job", "create"]) == 2


class TestServe:
    def test_restart_keeps_domain(self, tmp_path):
        srv = Serve(tmp_path)
        dom = requests.post(srv.url("/v1/tagdomains"),
                            json={"name": "kept", "tags": ["a"]}).json()
        srv.kill()
        srv = Serve(tmp_path)
        try:
            assert requests.get(srv.url(f"/v1/tagdomains/{dom['id']}")).json() == dom
        finally:
            srv.stop()

    def test_port_in_use(self, tmp_path):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            s.listen()
            port = s.getsockname()[1]
            res = run_cli("--addr", f"127.0.0.1:{port}", "--data-dir", str(tmp_path), "serve")
        assert res.returncode == 2 and "cannot bind" in res.stderr

    def test_corrupt_journal(self, tmp_path):
        (tmp_path / "journal.jsonl").write_text(
            '{"op":"put_tag","data":{"id":"x"}}\n{"op":"bogus","data":{}}\n')
        res = run_cli("--addr", f"127.0.0.1:{free_port()}", "--data-dir", str(tmp_path), "serve")
        assert res.returncode == 3 and "line 1" in res.stderr

    def test_garbage_journal_line(self, tmp_path):
        (tmp_path / "journal.jsonl").write_text('\n\n{not json}\n')
        res = run_cli("--addr", f"127.0.0.1:{free_port()}", "--data-dir", str(tmp_path), "serve")
        assert res.returncode == 3 and "line 3" in res.stderr

    def test_env_vars(self, tmp_path):
        port = free_port()
        res = run_cli("domain", "list", env={"JAMAICA_ADDR": f"127.0.0.1:{port}"})
        assert res.returncode == 4 and str(port) in res.stderr
