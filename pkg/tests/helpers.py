import numpy as np
import pytest


def write_color_video(path, colors, fps=10, seconds_each=1.0, size=(32, 24)):
    """Solid-color MJPG clip, one block of ``seconds_each`` per RGB color."""
    cv2 = pytest.importorskip("cv2")
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, size)
    if not writer.isOpened():
        pytest.skip("no MJPG encoder available")
    for rgb in colors:
        frame = np.zeros((size[1], size[0], 3), np.uint8)
        frame[:] = rgb[::-1]  # BGR
        for _ in range(int(fps * seconds_each)):
            writer.write(frame)
    writer.release()
