"""Quick check of the Python bindings.

Build first, either with `maturin develop -m crates/py/Cargo.toml` or with
`cargo build --release -p sdfgraph-py` and copying
target/release/libsdfgraph_py.so to python/sdfgraph.so.
"""

import math
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import sdfgraph


def close(a, b, tol=1e-9):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    t = sdfgraph.SimilarityTransform.from_euler(30.0, -10.0, 5.0, [0.2, -0.4, 1.0], 1.7)
    p = [0.3, 0.1, -0.2]
    assert close(t.inverse().apply(t.apply(p)), p)

    poses = [
        sdfgraph.CameraPose.look_at([3 * math.cos(a), 3 * math.sin(a), 1.0], [0, 0, 0], [0, 0, 1])
        for a in (0.0, 1.0, 2.5)
    ]
    pairs = [(q, sdfgraph.transform_pose(q, t)[0]) for q in poses]
    est = sdfgraph.init_registration(pairs)
    assert est.max_entry_diff(t) < 1e-9, est

    with tempfile.TemporaryDirectory() as tmp:
        manifest = sdfgraph.generate_scene(Path(tmp) / "scene", grid=25)
        loaded = sdfgraph.Manifest.load(manifest)
        assert len(loaded) == 2 and len(loaded.edges()) == 1

        summary = sdfgraph.run_pipeline(
            manifest, Path(tmp) / "run", iterations=20, rays=256, samples=32, mesh_resolution=[48, 48, 48]
        )
        assert summary["f_score"] > 0.9, summary
        print(f"f_score={summary['f_score']:.4f} chamfer={summary['chamfer']:.3e}")

        registered = sdfgraph.Manifest.load(Path(tmp) / "run" / "registered" / "manifest.json")
        field = registered.blend()
        vertices, triangles = field.mesh([40, 40, 40])
        assert vertices and triangles
        soft = field.seam_jump([-0.9, 0.05, 0.1], [0.9, 0.05, 0.1])
        print(f"{len(vertices)} vertices, seam jump {soft:.2e}")

    a = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
    assert sdfgraph.chamfer(a, a) == 0.0
    assert sdfgraph.f_score(a, a, 0.1) == 1.0
    print("ok")


if __name__ == "__main__":
    main()
