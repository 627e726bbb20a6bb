"""Renders the golden result directories through the CLI and the API."""

import csv
import hashlib
import shutil
from pathlib import Path

import pytest

from plotkit import ResultsError, load_summary, read_table, render_stabilization
from plotkit.cli import main

GOLDEN = Path(__file__).parent / "golden"
DIRS = {
    "stabilization": GOLDEN / "stabilize",
    "sync": GOLDEN / "sync",
    "xcorr": GOLDEN / "homodyne",
}
MAGIC = {"png": b"\x89PNG", "svg": b"<?xml", "pdf": b"%PDF"}


def tree_digest(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[p.relative_to(root)] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.mark.parametrize("figure", sorted(DIRS))
def test_regenerates_layout_in_all_formats(figure, tmp_path):
    base = tmp_path / figure
    rc = main([figure, str(DIRS[figure]), "-o", str(base),
               "--formats", "png,svg,pdf"])
    assert rc == 0
    for fmt, magic in MAGIC.items():
        out = base.with_suffix("." + fmt)
        assert out.is_file()
        blob = out.read_bytes()
        assert blob[:len(magic)] == magic
        assert len(blob) > 2000


def test_rendering_is_read_only(tmp_path):
    before = {name: tree_digest(d) for name, d in DIRS.items()}
    for figure, d in DIRS.items():
        assert main([figure, str(d), "-o", str(tmp_path / figure)]) == 0
    assert {name: tree_digest(d) for name, d in DIRS.items()} == before


@pytest.mark.parametrize("figure", sorted(DIRS))
def test_reproducible_flag_gives_identical_bytes(figure, tmp_path):
    outs = []
    for tag in ("one", "two"):
        base = tmp_path / tag / figure
        rc = main([figure, str(DIRS[figure]), "-o", str(base),
                   "--formats", "png,svg,pdf", "--reproducible"])
        assert rc == 0
        outs.append(base)
    for fmt in MAGIC:
        a = outs[0].with_suffix("." + fmt).read_bytes()
        b = outs[1].with_suffix("." + fmt).read_bytes()
        assert a == b, f"{figure}.{fmt} differs between reproducible runs"


def test_out_suffix_pins_single_format(tmp_path, capsys):
    out = tmp_path / "only.png"
    rc = main(["sync", str(DIRS["sync"]), "-o", str(out)])
    assert rc == 0
    assert out.is_file()
    assert list(tmp_path.iterdir()) == [out]
    assert str(out) in capsys.readouterr().out


def test_api_returns_written_paths(tmp_path):
    written = render_stabilization(DIRS["stabilization"],
                                   out_base=tmp_path / "stab",
                                   formats=("png",))
    assert written == [tmp_path / "stab.png"]
    assert written[0].is_file()


def test_missing_directory_fails_cleanly(tmp_path, capsys):
    rc = main(["sync", str(tmp_path / "nowhere"), "-o", str(tmp_path / "x")])
    assert rc == 2
    assert "plotkit error" in capsys.readouterr().err


def test_kind_mismatch_fails_cleanly(tmp_path, capsys):
    rc = main(["stabilization", str(DIRS["sync"]), "-o", str(tmp_path / "x")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "sync-sweep" in err and "stabilize" in err


def test_empty_trajectory_archive_fails_cleanly(tmp_path, capsys):
    clone = tmp_path / "homodyne"
    shutil.copytree(DIRS["xcorr"], clone)
    for path in clone.glob("xcorr_*.csv"):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        keep = [i for i, name in enumerate(rows[0])
                if not name.startswith("traj_")]
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows([[r[i] for i in keep] for r in rows])
    rc = main(["xcorr", str(clone), "-o", str(tmp_path / "x")])
    assert rc == 2
    assert "no trajectory curves" in capsys.readouterr().err


def test_load_summary_checks_kind():
    with pytest.raises(ResultsError, match="expected 'homodyne'"):
        load_summary(DIRS["sync"], expect_kind="homodyne")


def test_read_table_parses_empty_cells(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1.5,\n,2.5\n")
    t = read_table(p)
    assert t["a"][0] == 1.5 and t["b"][1] == 2.5
    assert len(t["a"]) == 2
    import numpy as np
    assert np.isnan(t["b"][0]) and np.isnan(t["a"][1])


def test_read_table_rejects_ragged_rows(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1.0\n")
    with pytest.raises(ResultsError, match="cells"):
        read_table(p)
