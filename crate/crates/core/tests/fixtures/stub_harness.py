"""Minimal plan interpreter used to exercise the process runner.

Reads one plan document from stdin, imports the candidate, and prints one
observation line per statement. Only the pieces the runner tests need.
"""
import base64
import importlib.util
import inspect
import json
import sys
import time


def emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def decode(v, results):
    if isinstance(v, dict) and len(v) == 1:
        (tag, payload), = v.items()
        if tag == "!bytes":
            return base64.b64decode(payload)
        if tag == "!ref":
            return results[int(payload[1:])]
    return v


def encode(v, index):
    if isinstance(v, (bytes, bytearray)):
        return {"!bytes": base64.b64encode(bytes(v)).decode()}
    if v is None or isinstance(v, (bool, int, float, str)):
        return v
    return {"!ref": "A%d" % index}


def main():
    text = sys.stdin.read()
    if not text.strip():
        sys.exit(2)
    plan = json.loads(text)
    try:
        spec = importlib.util.spec_from_file_location("candidate", plan["modulePath"])
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)
    except BaseException as e:  # noqa: BLE001
        emit({"status": "loadError", "detail": "%s: %s" % (type(e).__name__, e)})
        sys.exit(3)
    name = plan["signature"]["name"]
    classes = [c for _, c in inspect.getmembers(module, inspect.isclass) if c.__module__ == "candidate"]
    cls = getattr(module, name, None) or (classes[0] if len(classes) == 1 else None)
    results = {}
    for st in plan["statements"]:
        start = time.perf_counter()
        obs = {"index": st["index"]}
        try:
            args = [decode(a, results) for a in st["inputs"]]
            if st["op"] == "create":
                out = cls(*args)
            else:
                out = getattr(results[int(st["target"][1:])], st["op"])(*args)
            results[st["index"]] = out
            obs.update(status="value", value=encode(out, st["index"]))
        except Exception as e:  # noqa: BLE001
            obs.update(status="exception", detail="%s: %s" % (type(e).__name__, e))
        obs["durationMicros"] = int((time.perf_counter() - start) * 1e6)
        emit(obs)


main()
