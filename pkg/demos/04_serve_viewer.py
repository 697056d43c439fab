"""Stand up the render service plus the browser viewer.

Prepares an artifacts directory (reusing demo 02's output when present,
otherwise synthesizing a volume) and starts the HTTP/WebSocket service.
Open the printed URL, pick an artifact, press Load, then drag to rotate,
scroll to zoom, middle-drag to pan, and edit the opacity curve. Build the
viewer bundle first:

    cd frontend && npm install && npm run build
"""

from pathlib import Path

import uvicorn

from apmg import BlobSpec, save_volume, synth_volume
from apmg.service import create_app

artifacts = Path("demo_decomposed")
if not artifacts.is_dir():
    artifacts = Path("demo_artifacts")
    artifacts.mkdir(exist_ok=True)
    volume = synth_volume(
        (48, 48, 48),
        [BlobSpec(center=(0.3, -0.2, 0.1), sigma=(0.15, 0.2, 0.12))],
    )
    save_volume(volume, artifacts / "volume.raw", name="demo")
    print(f"created {artifacts}/volume.raw")

viewer = Path(__file__).resolve().parent.parent / "frontend" / "dist"
if not viewer.is_dir():
    print("viewer bundle not found; API only (build it with: cd frontend && npm run build)")
    viewer = None

app = create_app(artifacts, viewer_dir=viewer)
print(f"serving artifacts from {artifacts}/ at http://127.0.0.1:8080")
uvicorn.run(app, host="127.0.0.1", port=8080)
