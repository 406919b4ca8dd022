import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imagescene.errors import DegenerateGeometryError
from imagescene.mesh import TriangleMesh, box, icosphere
from imagescene.properties import (
    DEFAULT_DENSITY,
    DEFAULT_FRICTION,
    RemoteEstimator,
    estimate_properties,
    is_watertight,
    load_table,
    mass_from_density,
    mesh_volume,
    validate_remote,
)
from imagescene.synth import canonical_shape


def test_banana_comes_from_table():
    r = estimate_properties("banana")
    entry = load_table()["banana"]
    assert r.provenance == "table"
    assert r.properties.density == entry["density"]
    assert r.properties.static_friction == entry["static_friction"]


def test_unknown_category_gets_defaults():
    r = estimate_properties("zzz")
    assert r.provenance == "default"
    assert r.properties.density == DEFAULT_DENSITY == 500.0
    assert r.properties.static_friction == DEFAULT_FRICTION == 0.5


def test_out_of_range_remote_falls_to_table():
    calls = []

    def client(request):
        calls.append(request)
        return {"density": 900.0, "static_friction": 9.0}

    r = estimate_properties("banana", client, "on a plate")
    assert calls[0].category == "banana" and calls[0].context == "on a plate"
    assert r.provenance == "table"


@pytest.mark.parametrize(
    "payload",
    [None, [], {"static_friction": 0.4}, {"density": "heavy", "static_friction": 0.4}, {"density": float("nan"), "static_friction": 0.4}, {"density": 100, "static_friction": 0.4, "restitution": 2}],
)
def test_malformed_payloads_rejected(payload):
    with pytest.raises(ValueError):
        validate_remote(payload)


def test_valid_remote_is_used():
    r = estimate_properties("zzz", lambda req: {"mass": 0.2, "static_friction": 0.7})
    assert r.provenance == "remote"
    assert r.properties.mass == 0.2
    assert r.properties.dynamic_friction == pytest.approx(0.56)


def test_transport_failure_never_raises():
    def client(request):
        raise TimeoutError("slow")

    assert estimate_properties("apple", client).provenance == "table"


def test_http_client_round_trip():
    seen = {}

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            seen.update(json.loads(self.rfile.read(int(self.headers["Content-Length"]))))
            body = json.dumps({"density": 1234.0, "static_friction": 0.3}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        client = RemoteEstimator(f"http://127.0.0.1:{server.server_port}/", timeout=5)
        r = estimate_properties("vase", client, "blue")
    finally:
        server.shutdown()
    assert seen == {"category": "vase", "context": "blue"}
    assert r.provenance == "remote" and r.properties.density == 1234.0


def test_unit_cube_masses():
    cube = box((1, 1, 1))
    assert is_watertight(cube)
    assert mass_from_density(cube, 1.0, 1000.0) == pytest.approx(1000.0, rel=1e-12)
    assert mass_from_density(cube, 0.1, 1000.0) == pytest.approx(1.0, rel=1e-12)


def test_icosphere_volume():
    vol, method = mesh_volume(icosphere(1.0, 3))
    assert method == "divergence"
    assert vol == pytest.approx(4 * np.pi / 3, rel=0.02)


@given(st.floats(0.01, 10.0), st.sampled_from(["lblock", "wedge", "notched"]))
def test_mass_is_cubic_in_scale(s, shape):
    m = canonical_shape(shape)
    assert mass_from_density(m, s, 700.0) == pytest.approx(mass_from_density(m, 1.0, 700.0) * s**3, rel=1e-9)


def test_extrusion_volume_matches_shoelace():
    poly = np.array([(0, 0), (1, 0), (1, 0.35), (0.35, 0.35), (0.35, 0.7), (0, 0.7)])
    area = 0.5 * abs(np.dot(poly[:, 0], np.roll(poly[:, 1], -1)) - np.dot(poly[:, 1], np.roll(poly[:, 0], -1)))
    from imagescene.mesh import extrude

    vol, method = mesh_volume(extrude(poly, 0.5))
    assert method == "divergence"
    assert vol == pytest.approx(area * 0.5, rel=1e-12)


def test_open_mesh_uses_hull():
    cube = box((2, 1, 1))
    open_box = TriangleMesh(cube.vertices, cube.triangles[:-1])
    vol, method = mesh_volume(open_box)
    assert method == "convex-hull" and vol == pytest.approx(2.0)


def test_flat_mesh_is_degenerate():
    flat = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float), [[0, 1, 2], [1, 3, 2]])
    with pytest.raises(DegenerateGeometryError):
        mass_from_density(flat, 1.0, 100.0)
