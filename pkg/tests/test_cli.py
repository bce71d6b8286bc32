"""CLI surface: run, compare, dump-routes, trace; exit codes and outputs."""

from bsnsim.cli import main


def test_run_writes_csvs(tmp_path, capsys):
    rc = main(["run", "--scenario", "table1_links", "--protocol", "direct",
               "--seed", "2000", "--until", "5", "--out", str(tmp_path)])
    assert rc == 0
    run_csv = tmp_path / "run_direct_2000.csv"
    assert run_csv.exists()
    lines = run_csv.read_text().splitlines()
    assert lines[0] == "metric,class,value"
    assert any(line.startswith("pdr,all,") for line in lines)
    assert (tmp_path / "aggregate_direct.csv").exists()


def test_compare_requires_two_protocols(tmp_path, capsys):
    rc = main(["compare", "--scenario", "table1_links",
               "--protocols", "direct", "--out", str(tmp_path)])
    assert rc != 0
    err = capsys.readouterr().err
    assert ">= 2" in err


def test_compare_emits_aggregate_and_report(tmp_path, capsys):
    rc = main(["compare", "--scenario", "paper_fig2",
               "--protocols", "csma802154,pbtdma", "--reps", "2",
               "--until", "4", "--out", str(tmp_path)])
    assert rc == 0
    agg = (tmp_path / "aggregate.csv").read_text().splitlines()
    assert agg[0] == "protocol,metric,class,mean,std,min,max,n"
    assert any(row.startswith("csma802154,pdr,all,") for row in agg)
    assert any(row.startswith("pbtdma,pdr,all,") for row in agg)
    report = (tmp_path / "report.txt").read_text()
    assert "ordering:" in report
    assert "pdr[all]:" in report


def test_dump_routes_csv(capsys):
    rc = main(["dump-routes", "--scenario", "bridge_inbody"])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "src,dst,route_kind,ingress,bridge,egress"
    rows = {tuple(r.split(",")[:3]) for r in out[1:]}
    assert ("imp1", "chest", "via_bridge") in rows
    assert ("imp1", "imp2", "via_bridge") in rows
    assert ("chest", "ankle", "direct") in rows
    full = {r for r in out[1:]}
    assert "imp1,chest,via_bridge,mics,bnc,ism" in full
    assert "imp1,imp2,via_bridge,mics,bnc,mics" in full


def test_trace_determinism_byte_identical(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    for out in (out1, out2):
        rc = main(["trace", "--scenario", "paper_fig2",
                   "--protocol", "csma802154", "--seed", "7",
                   "--until", "3", "--out", str(out)])
        assert rc == 0
    t1 = (out1 / "trace_csma802154_7.txt").read_bytes()
    t2 = (out2 / "trace_csma802154_7.txt").read_bytes()
    assert t1 == t2
    c1 = (out1 / "run_csma802154_7.csv").read_bytes()
    c2 = (out2 / "run_csma802154_7.csv").read_bytes()
    assert c1 == c2


def test_unknown_scenario_exit_code(capsys):
    rc = main(["run", "--scenario", "nope", "--protocol", "direct"])
    assert rc == 2
    assert "scenario error" in capsys.readouterr().err


def test_unknown_protocol_exit_code(tmp_path, capsys):
    rc = main(["run", "--scenario", "table1_links", "--protocol", "bogus",
               "--until", "1", "--out", str(tmp_path)])
    assert rc == 1
    assert "unknown protocol" in capsys.readouterr().err
