from __future__ import annotations

import logging
import os
import tempfile
from pathlib import Path

logger = logging.getLogger(__name__)


def write_text_atomic(path: Path, data: str) -> None:
    """Replace ``path`` with ``data`` (UTF-8) so readers never see a partial file.

    The temporary file lives next to the target and is removed if the write or
    the rename fails; an existing target is left untouched in that case.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(
        dir=path.parent, prefix=f".{path.name}.", suffix=".tmp", delete=False
    ) as tmp:
        temp_path = Path(tmp.name)
        try:
            tmp.write(data.encode("utf-8"))
            tmp.flush()
            os.fsync(tmp.fileno())
        except BaseException:
            tmp.close()
            temp_path.unlink(missing_ok=True)
            raise
    try:
        os.replace(temp_path, path)
    except BaseException:
        temp_path.unlink(missing_ok=True)
        raise
    logger.debug("wrote %d characters to %s", len(data), path)
