"""Media decoding interface: (video reference, timestamp) -> frame.

The engine never decodes video itself; it asks a FrameDecoder. Two
implementations ship here:

* SceneScriptDecoder -- reads a ``*.scenes.json`` timeline of content
  descriptors, for fixtures and mock runs (no video files needed).
* OpenCVDecoder -- decodes real video files (requires cv2; imported lazily).

A decode failure surfaces as FrameDecodeError; the filter stage counts such
frames as non-surgical votes (fail-closed).
"""

import base64
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


class FrameDecodeError(Exception):
    pass


@dataclass(frozen=True)
class Frame:
    """Either raw encoded image bytes or a textual content descriptor."""

    frame_id: str
    data_b64: Optional[str] = None
    descriptor: Optional[str] = None

    def to_payload_item(self) -> dict:
        item: dict = {"id": self.frame_id}
        if self.data_b64 is not None:
            item["data_b64"] = self.data_b64
        if self.descriptor is not None:
            item["descriptor"] = self.descriptor
        return item


class SceneScriptDecoder:
    """Frames from a scene timeline file.

    The file is a JSON list of {"t_start_ms", "t_end_ms", "content"} entries;
    the frame at time t carries the content string of the scene covering t
    (intervals are [start, end)). Times outside every scene fail to decode.
    """

    def __init__(self, scenes_path: str | Path):
        self._path = Path(scenes_path)
        self._scenes = json.loads(self._path.read_text(encoding="utf-8"))

    def decode(self, video_id: str, timestamp_ms: int) -> Frame:
        for scene in self._scenes:
            if scene["t_start_ms"] <= timestamp_ms < scene["t_end_ms"]:
                return Frame(
                    frame_id=f"{video_id}@{timestamp_ms}",
                    descriptor=scene["content"],
                )
        raise FrameDecodeError(f"{video_id}: no scene covers t={timestamp_ms} ms")


class OpenCVDecoder:
    """Frames from a real video file, JPEG-encoded."""

    def __init__(self, video_path: str | Path):
        import cv2  # heavyweight; only needed for real video runs

        self._cv2 = cv2
        self._path = str(video_path)
        self._cap = cv2.VideoCapture(self._path)
        if not self._cap.isOpened():
            raise FrameDecodeError(f"cannot open video {self._path}")

    def decode(self, video_id: str, timestamp_ms: int) -> Frame:
        self._cap.set(self._cv2.CAP_PROP_POS_MSEC, float(timestamp_ms))
        ok, image = self._cap.read()
        if not ok:
            raise FrameDecodeError(f"{video_id}: read failed at t={timestamp_ms} ms")
        ok, buf = self._cv2.imencode(".jpg", image)
        if not ok:
            raise FrameDecodeError(f"{video_id}: JPEG encode failed at t={timestamp_ms} ms")
        return Frame(
            frame_id=f"{video_id}@{timestamp_ms}",
            data_b64=base64.b64encode(buf.tobytes()).decode("ascii"),
        )

    def close(self) -> None:
        self._cap.release()
