"""Flat key=value configuration: file parsing, typed option resolution, and
the startup echo that round-trips back into an identical run."""

from dataclasses import dataclass

from .errors import ConfigError, FormatError


@dataclass
class Option:
    name: str
    typ: str  # int | float | str | bool | ints | temps
    default: object = None
    help: str = ""
    required: bool = False
    choices: tuple = None


def parse_value(opt, raw):
    try:
        if opt.typ == "int":
            val = int(raw)
        elif opt.typ == "float":
            val = float(raw)
        elif opt.typ == "bool":
            if isinstance(raw, bool):
                val = raw
            else:
                low = str(raw).strip().lower()
                if low in ("1", "true", "yes", "on"):
                    val = True
                elif low in ("0", "false", "no", "off"):
                    val = False
                else:
                    raise ValueError(raw)
        elif opt.typ == "ints":
            val = tuple(int(p) for p in str(raw).split(","))
        elif opt.typ == "temps":
            parts = str(raw).split(":")
            if len(parts) == 1:
                val = (float(parts[0]), float(parts[0]))
            elif len(parts) == 2:
                val = (float(parts[0]), float(parts[1]))
            else:
                raise ValueError(raw)
        else:
            val = str(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {opt.name}: {raw!r}") from exc
    if opt.choices is not None and val not in opt.choices:
        raise ConfigError(
            f"{opt.name} must be one of {list(opt.choices)}, got {val!r}"
        )
    return val


def format_value(opt, val):
    if opt.typ == "bool":
        return "true" if val else "false"
    if opt.typ == "ints":
        return ",".join(str(v) for v in val)
    if opt.typ == "temps":
        return f"{val[0]}:{val[1]}"
    if opt.typ == "float":
        return repr(float(val))
    return str(val)


def parse_config_file(path):
    """Flat `key=value` lines; '#' starts a comment; blank lines ignored."""
    raw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, val = line.split("=", 1)
            raw[key.strip()] = val.strip()
    return raw


def resolve(options, cli_values, file_values):
    """CLI flag beats config file beats default; validates required keys."""
    eff = {}
    for opt in options:
        cli_raw = cli_values.get(opt.name)
        if cli_raw is not None:
            eff[opt.name] = (
                cli_raw if isinstance(cli_raw, bool) and opt.typ == "bool"
                else parse_value(opt, cli_raw)
            )
        elif opt.name in file_values:
            eff[opt.name] = parse_value(opt, file_values[opt.name])
        else:
            eff[opt.name] = opt.default
        if eff[opt.name] is None and opt.required:
            raise ConfigError(f"missing required option: {opt.name}")
    return eff


def echo_config(command, options, eff):
    """The startup echo; feeding these lines back as --config reproduces the
    same effective configuration."""
    lines = [f"# gridgen {command} effective config"]
    for opt in sorted(options, key=lambda o: o.name):
        val = eff[opt.name]
        if val is None:
            continue
        lines.append(f"{opt.name}={format_value(opt, val)}")
    lines.append("# end config")
    return "\n".join(lines)
