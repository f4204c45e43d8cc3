"""Plain-text robot model files.

Line-oriented key-value format: a `format` tag, a `model` section, one
`joint i` and `link i` section per joint, and an optional `selftest`
section holding the zero-configuration FK pose plus a known singular
configuration.  `#` starts a comment.  Unknown sections or keys are
rejected, floats are written with repr so a save/load cycle reproduces
every value bit-exactly.
"""

import numpy as np

from . import NJ, ModelError, RobotModel

FORMAT_TAG = "robot-model-v1"

_JOINT_KEYS = (
    "dh_alpha", "dh_a", "dh_d", "dh_theta", "motor_k",
    "q_min", "q_max", "dq_max",
    "fric_coulomb", "fric_stiction", "fric_viscous", "fric_stribeck_v",
    "fric_phi1", "fric_phi2", "fric_phi3",
)
_LINK_KEYS = ("mass", "com", "inertia")
_MODEL_KEYS = ("name", "gravity")
_SELFTEST_KEYS = ("fk_zero_pos", "fk_zero_rot", "singular_q")

_KEY_WIDTH = {"com": 3, "inertia": 6, "gravity": 3,
              "fk_zero_pos": 3, "fk_zero_rot": 9, "singular_q": NJ}


class ModelFileError(ModelError):
    """Malformed or inconsistent model file."""


def _parse_floats(key, parts, path, lineno):
    want = _KEY_WIDTH.get(key, 1)
    if len(parts) != want:
        raise ModelFileError(f"{path}:{lineno}: key {key!r} expects {want} value(s), got {len(parts)}")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ModelFileError(f"{path}:{lineno}: non-numeric value for key {key!r}") from None
    return vals[0] if want == 1 else vals


def load_robot_model(path) -> RobotModel:
    path = str(path)
    with open(path, "r") as fh:
        lines = fh.read().splitlines()

    sections: dict[str, dict] = {}
    section = None
    saw_format = False
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head = parts[0]
        if not saw_format:
            if head != "format" or len(parts) != 2:
                raise ModelFileError(f"{path}:{lineno}: file must start with a format tag")
            if parts[1] != FORMAT_TAG:
                raise ModelFileError(f"{path}:{lineno}: unsupported format {parts[1]!r}")
            saw_format = True
            continue
        if head in ("joint", "link"):
            if len(parts) != 2 or not parts[1].isdigit():
                raise ModelFileError(f"{path}:{lineno}: malformed section header {line!r}")
            idx = int(parts[1])
            if not 1 <= idx <= NJ:
                raise ModelFileError(f"{path}:{lineno}: {head} index {idx} out of range 1..{NJ}")
            section = f"{head} {idx}"
            if section in sections:
                raise ModelFileError(f"{path}:{lineno}: duplicate section {section!r}")
            sections[section] = {}
            continue
        if head in ("model", "selftest") and len(parts) == 1:
            section = head
            if section in sections:
                raise ModelFileError(f"{path}:{lineno}: duplicate section {section!r}")
            sections[section] = {}
            continue
        if section is None:
            raise ModelFileError(f"{path}:{lineno}: key outside any section")
        allowed = {"model": _MODEL_KEYS, "selftest": _SELFTEST_KEYS}.get(
            section.split()[0], _JOINT_KEYS if section.startswith("joint") else _LINK_KEYS)
        if head not in allowed:
            raise ModelFileError(f"{path}:{lineno}: unknown key {head!r} in section {section!r}")
        if head in sections[section]:
            raise ModelFileError(f"{path}:{lineno}: duplicate key {head!r} in section {section!r}")
        if head == "name":
            if len(parts) != 2:
                raise ModelFileError(f"{path}:{lineno}: name expects one token")
            sections[section][head] = parts[1]
        else:
            sections[section][head] = _parse_floats(head, parts[1:], path, lineno)

    if "model" not in sections:
        raise ModelFileError(f"{path}: missing model section")
    for i in range(1, NJ + 1):
        for sec in (f"joint {i}", f"link {i}"):
            if sec not in sections:
                raise ModelFileError(f"{path}: missing section {sec!r}")
    for sec, keys in (("model", _MODEL_KEYS),):
        for k in keys:
            if k not in sections[sec]:
                raise ModelFileError(f"{path}: missing key {k!r} in section {sec!r}")

    dh = np.empty((NJ, 4))
    mass = np.empty(NJ)
    com = np.empty((NJ, 3))
    inertia = np.empty((NJ, 3, 3))
    fric = np.empty((NJ, 7))
    kmot = np.empty(NJ)
    qmin = np.empty(NJ)
    qmax = np.empty(NJ)
    dqmax = np.empty(NJ)
    for i in range(NJ):
        j = sections[f"joint {i + 1}"]
        l = sections[f"link {i + 1}"]
        for keys, sec, name in ((_JOINT_KEYS, j, f"joint {i + 1}"), (_LINK_KEYS, l, f"link {i + 1}")):
            for k in keys:
                if k not in sec:
                    raise ModelFileError(f"{path}: missing key {k!r} in section {name!r}")
        dh[i] = (j["dh_alpha"], j["dh_a"], j["dh_d"], j["dh_theta"])
        kmot[i] = j["motor_k"]
        qmin[i], qmax[i], dqmax[i] = j["q_min"], j["q_max"], j["dq_max"]
        fric[i] = (j["fric_coulomb"], j["fric_stiction"], j["fric_viscous"],
                   j["fric_stribeck_v"], j["fric_phi1"], j["fric_phi2"], j["fric_phi3"])
        mass[i] = l["mass"]
        com[i] = l["com"]
        xx, xy, xz, yy, yz, zz = l["inertia"]
        inertia[i] = [[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]]

    st_pos = st_rot = sing = None
    if "selftest" in sections:
        st = sections["selftest"]
        for k in _SELFTEST_KEYS:
            if k not in st:
                raise ModelFileError(f"{path}: missing key {k!r} in section 'selftest'")
        st_pos = np.array(st["fk_zero_pos"])
        st_rot = np.array(st["fk_zero_rot"]).reshape(3, 3)
        sing = np.array(st["singular_q"])

    model = RobotModel(
        name=sections["model"]["name"],
        gravity=np.array(sections["model"]["gravity"]),
        dh=dh, mass=mass, com=com, inertia=inertia, friction=fric,
        motor_k=kmot, q_min=qmin, q_max=qmax, dq_max=dqmax,
        selftest_pos=st_pos, selftest_rot=st_rot, singular_q=sing,
    )
    model.validate()
    return model


def _fmt(v) -> str:
    return repr(float(v))


def save_robot_model(model: RobotModel, path) -> None:
    model.validate()
    out = [f"format {FORMAT_TAG}", "", "model",
           f"  name {model.name}",
           "  gravity " + " ".join(_fmt(v) for v in model.gravity), ""]
    for i in range(NJ):
        out.append(f"joint {i + 1}")
        out.append(f"  dh_alpha {_fmt(model.dh[i, 0])}")
        out.append(f"  dh_a {_fmt(model.dh[i, 1])}")
        out.append(f"  dh_d {_fmt(model.dh[i, 2])}")
        out.append(f"  dh_theta {_fmt(model.dh[i, 3])}")
        out.append(f"  motor_k {_fmt(model.motor_k[i])}")
        out.append(f"  q_min {_fmt(model.q_min[i])}")
        out.append(f"  q_max {_fmt(model.q_max[i])}")
        out.append(f"  dq_max {_fmt(model.dq_max[i])}")
        for key, col in (("fric_coulomb", 0), ("fric_stiction", 1), ("fric_viscous", 2),
                         ("fric_stribeck_v", 3), ("fric_phi1", 4), ("fric_phi2", 5),
                         ("fric_phi3", 6)):
            out.append(f"  {key} {_fmt(model.friction[i, col])}")
        out.append("")
        out.append(f"link {i + 1}")
        out.append(f"  mass {_fmt(model.mass[i])}")
        out.append("  com " + " ".join(_fmt(v) for v in model.com[i]))
        I = model.inertia[i]
        out.append("  inertia " + " ".join(
            _fmt(v) for v in (I[0, 0], I[0, 1], I[0, 2], I[1, 1], I[1, 2], I[2, 2])))
        out.append("")
    if model.selftest_pos is not None:
        out.append("selftest")
        out.append("  fk_zero_pos " + " ".join(_fmt(v) for v in model.selftest_pos))
        out.append("  fk_zero_rot " + " ".join(_fmt(v) for v in model.selftest_rot.ravel()))
        out.append("  singular_q " + " ".join(_fmt(v) for v in model.singular_q))
        out.append("")
    with open(str(path), "w") as fh:
        fh.write("\n".join(out))
