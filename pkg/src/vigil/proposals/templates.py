"""Source emitted into the target repo by the reliability strategies."""
from __future__ import annotations

RELIABILITY_STEM = "utils/reliability"
CONTRACT_FUNCTIONS = (
    "to_utc_iso",
    "call_with_retry",
    "structured_toast",
    "wait_for_receipt",
    "gate_success_on_receipt",
)

PYTHON_RELIABILITY = '''\
"""Reliability helpers: UTC timestamps, one-shot retries, receipt-gated toasts."""
from __future__ import annotations

import logging
import random
import time
from datetime import datetime, timezone

logger = logging.getLogger(__name__)

# Tunables; reviewers may adjust these.
RETRY_BASE_SEC = 1.0
RETRY_FACTOR = 2.0
RETRY_MAX_RETRIES = 1
RECEIPT_TIMEOUT_SEC = 30.0
RECEIPT_POLL_SEC = 0.5


def to_utc_iso(value):
    """Render a datetime, epoch seconds or ISO string as UTC ISO-8601 with a Z suffix.

    Naive datetimes are taken to be local time.
    """
    if isinstance(value, (int, float)):
        value = datetime.fromtimestamp(value, tz=timezone.utc)
    elif isinstance(value, str):
        value = datetime.fromisoformat(value.replace("Z", "+00:00"))
    return value.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def call_with_retry(fn, *args, retries=RETRY_MAX_RETRIES, base=RETRY_BASE_SEC,
                    factor=RETRY_FACTOR, sleep=time.sleep, **kwargs):
    """Call ``fn``; on exception retry up to ``retries`` times with full-jitter backoff."""
    attempt = 0
    while True:
        try:
            return fn(*args, **kwargs)
        except Exception:
            if attempt >= retries:
                raise
            delay = random.uniform(0.0, base * factor ** attempt)
            logger.warning("call failed; retrying in %.2fs (attempt %d/%d)", delay, attempt + 1, retries)
            sleep(delay)
            attempt += 1


def structured_toast(level, reason_code, message, emit=print, **meta):
    """Build and emit a toast payload with a stable reason code."""
    payload = {
        "level": level,
        "reason_code": reason_code,
        "message": message,
        "ts": to_utc_iso(datetime.now(timezone.utc)),
    }
    payload.update(meta)
    emit(payload)
    return payload


def wait_for_receipt(check, timeout=RECEIPT_TIMEOUT_SEC, interval=RECEIPT_POLL_SEC,
                     clock=time.monotonic, sleep=time.sleep):
    """Poll ``check()`` until it returns truthy or ``timeout`` seconds pass."""
    deadline = clock() + timeout
    while True:
        if check():
            return True
        if clock() >= deadline:
            return False
        sleep(interval)


def gate_success_on_receipt(check, emit_success, emit_failure=None, timeout=RECEIPT_TIMEOUT_SEC, **kwargs):
    """Emit success only after the backend confirms; otherwise a structured failure."""
    started = time.monotonic()
    confirmed = wait_for_receipt(check, timeout=timeout, **kwargs)
    receipt_lag_ms = int((time.monotonic() - started) * 1000)
    logger.info("receipt_lag_ms=%d confirmed=%s", receipt_lag_ms, confirmed)
    if confirmed:
        emit_success()
        return True
    if emit_failure is not None:
        emit_failure()
    else:
        structured_toast("error", "RECEIPT_TIMEOUT", "Action not confirmed by backend",
                         receipt_lag_ms=receipt_lag_ms)
    return False
'''

TEMPLATES = {"python": (".py", PYTHON_RELIABILITY)}
