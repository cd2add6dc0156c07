//! Instrumented harness templates. Every harness prints one
//! `VLF_EVENT {"sink","arg","ts"}` line per intercepted call.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AttackVector, ExploitHypothesis, HarnessError, Payload};
use crate::uast::Language;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessBundle {
    pub sample_id: String,
    pub payload_id: String,
    pub marker: String,
    /// File name (relative to the workdir) to contents.
    pub files: BTreeMap<String, String>,
    /// Runs inside the container, with the workdir mounted at `/work`.
    pub entry_command: Vec<String>,
    /// Runs on the host inside the workdir before the container starts.
    pub compile_command: Option<Vec<String>>,
}

const PY_HARNESS: &str = r#"import builtins, io, json, os, sys, time

sys.dont_write_bytecode = True
_out = sys.stdout
_real_open = builtins.open


def _emit(sink, arg):
    if isinstance(arg, (bytes, bytearray)):
        arg = bytes(arg).decode("latin-1")
    _out.write("VLF_EVENT " + json.dumps({"sink": sink, "arg": str(arg), "ts": time.time()}) + "\n")
    _out.flush()


def _open(file, *a, **k):
    _emit("open", os.fspath(file) if isinstance(file, (str, bytes, os.PathLike)) else file)
    return _real_open(file, *a, **k)


builtins.open = _open
io.open = _open
_real_os_open = os.open


def _os_open(path, *a, **k):
    _emit("open", os.fspath(path))
    return _real_os_open(path, *a, **k)


os.open = _os_open


def _system(cmd):
    _emit("system", cmd)
    return 0


def _popen(cmd, *a, **k):
    _emit("popen", cmd)
    return io.StringIO("")


os.system = _system
os.popen = _popen

import subprocess


class _FakePopen:
    def __init__(self, args, *a, **k):
        _spawn(args, k)
        self.args = args
        self.returncode = 0
        self.stdout = io.BytesIO(b"")
        self.stderr = io.BytesIO(b"")
        self.pid = 0

    def communicate(self, *a, **k):
        return (b"", b"")

    def wait(self, *a, **k):
        return 0

    def poll(self):
        return 0

    def __enter__(self):
        return self

    def __exit__(self, *a):
        return False


def _spawn(args, kwargs):
    if kwargs.get("shell") or isinstance(args, (str, bytes)):
        _emit("subprocess_shell", args if isinstance(args, (str, bytes)) else " ".join(map(str, args)))
    else:
        _emit("subprocess_argv", json.dumps([str(x) for x in args]))


def _run(args, *a, **k):
    _spawn(args, k)
    return subprocess.CompletedProcess(args, 0, b"", b"")


def _call(args, *a, **k):
    _spawn(args, k)
    return 0


def _check_output(args, *a, **k):
    _spawn(args, k)
    return "" if k.get("text") or k.get("universal_newlines") else b""


subprocess.Popen = _FakePopen
subprocess.run = _run
subprocess.call = _call
subprocess.check_call = _call
subprocess.check_output = _check_output

import sqlite3

_real_connect = sqlite3.connect


class _Cursor(sqlite3.Cursor):
    def execute(self, sql, *a):
        _emit("execute", sql)
        return super().execute(sql, *a)

    def executemany(self, sql, *a):
        _emit("executemany", sql)
        return super().executemany(sql, *a)

    def executescript(self, sql):
        _emit("executescript", sql)
        return super().executescript(sql)


class _Connection(sqlite3.Connection):
    def cursor(self, factory=_Cursor):
        return super().cursor(factory)

    def execute(self, sql, *a):
        return self.cursor().execute(sql, *a)

    def executemany(self, sql, *a):
        return self.cursor().executemany(sql, *a)

    def executescript(self, sql):
        return self.cursor().executescript(sql)


def _connect(*a, **k):
    k["factory"] = _Connection
    return _real_connect(*a, **k)


sqlite3.connect = _connect

import pickle, types


def _pickle_loads(data, *a, **k):
    _emit("pickle.loads", data)
    return None


def _pickle_load(f, *a, **k):
    _emit("pickle.loads", f.read())
    return None


pickle.loads = _pickle_loads
pickle.load = _pickle_load

try:
    import yaml
except ImportError:
    yaml = types.ModuleType("yaml")
    yaml.SafeLoader = yaml.Loader = yaml.FullLoader = object
    sys.modules["yaml"] = yaml


def _yaml_load(stream, *a, **k):
    _emit("yaml.load", stream.read() if hasattr(stream, "read") else stream)
    return None


def _yaml_safe_load(stream, *a, **k):
    _emit("yaml.safe_load", stream.read() if hasattr(stream, "read") else stream)
    return None


yaml.load = _yaml_load
yaml.unsafe_load = _yaml_load
yaml.full_load = _yaml_load
yaml.safe_load = _yaml_safe_load

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import inspect
import target as _target

PAYLOAD = __PAYLOAD__
VECTOR = "__VECTOR__"


def _invoke():
    handle = _target.handle
    arity = len(inspect.signature(handle).parameters)
    if VECTOR == "stdin":
        sys.stdin = io.StringIO(PAYLOAD)
        return handle() if arity == 0 else handle(sys.stdin.read())
    if VECTOR == "templated_variable":
        os.environ["VLF_INPUT"] = PAYLOAD
        _target.VLF_INPUT = PAYLOAD
        return handle() if arity == 0 else handle(PAYLOAD)
    return handle(PAYLOAD)


_invoke()
"#;

const CPP_HARNESS: &str = r#"#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <string>

void handle(const std::string& input);

static void vlf_emit(const char* sink, const char* arg) {
    std::string out = "VLF_EVENT {\"sink\":\"";
    out += sink;
    out += "\",\"arg\":\"";
    for (const char* p = arg ? arg : ""; *p; ++p) {
        unsigned char c = static_cast<unsigned char>(*p);
        if (c == '"' || c == '\\') {
            out += '\\';
            out += static_cast<char>(c);
        } else if (c < 0x20 || c >= 0x7f) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\u%04x", c);
            out += buf;
        } else {
            out += static_cast<char>(c);
        }
    }
    char ts[32];
    std::snprintf(ts, sizeof ts, "%ld", static_cast<long>(std::time(nullptr)));
    out += "\",\"ts\":";
    out += ts;
    out += "}\n";
    std::fputs(out.c_str(), stdout);
    std::fflush(stdout);
}

extern "C" {
FILE* __real_fopen(const char* path, const char* mode);

int __wrap_system(const char* cmd) {
    vlf_emit("system", cmd);
    return 0;
}

FILE* __wrap_popen(const char* cmd, const char*) {
    vlf_emit("popen", cmd);
    static char empty[1] = {0};
    return fmemopen(empty, 1, "r");
}

int __wrap_pclose(FILE* f) {
    return std::fclose(f);
}

FILE* __wrap_fopen(const char* path, const char* mode) {
    vlf_emit("fopen", path);
    return __real_fopen(path, mode);
}

int mysql_query(void*, const char* q) {
    vlf_emit("mysql_query", q);
    return 0;
}
}

static const char PAYLOAD[] = __PAYLOAD__;

int main() {
    std::string input(PAYLOAD, sizeof PAYLOAD - 1);
    if (std::strcmp("__VECTOR__", "templated_variable") == 0) {
        setenv("VLF_INPUT", input.c_str(), 1);
        handle(std::string(std::getenv("VLF_INPUT")));
    } else {
        handle(input);
    }
    return 0;
}
"#;

const JAVA_HARNESS: &str = r#"import java.lang.reflect.Method;
import java.lang.reflect.Modifier;

public class VlfHarness {
    public static void main(String[] args) throws Exception {
        String payload = __PAYLOAD__;
        System.out.println("VLF_EVENT {\"sink\":\"entry\",\"arg\":" + __PAYLOAD_JSON__ + ",\"ts\":" + System.currentTimeMillis() / 1000.0 + "}");
        Class<?> target = Class.forName("__CLASS__");
        Method handle = target.getDeclaredMethod("handle", String.class);
        handle.setAccessible(true);
        Object self = Modifier.isStatic(handle.getModifiers()) ? null : target.getDeclaredConstructor().newInstance();
        handle.invoke(self, payload);
    }
}
"#;

pub const CPP_FLAGS: &[&str] = &[
    "-std=c++17",
    "-O0",
    "-g",
    "-fsanitize=address,undefined",
    "-fno-omit-frame-pointer",
    "-static-libasan",
    "-static-libstdc++",
    "-Wl,--wrap=system,--wrap=popen,--wrap=pclose,--wrap=fopen",
];

fn vector_name(v: AttackVector) -> &'static str {
    match v {
        AttackVector::Argument => "argument",
        AttackVector::Stdin => "stdin",
        AttackVector::TemplatedVariable => "templated_variable",
    }
}

/// C string literal; octal escapes never swallow following digits the way
/// `\x` escapes do.
fn c_literal(s: &str) -> String {
    let mut out = String::from("\"");
    for &b in s.as_bytes() {
        match b {
            b'"' => out.push_str("\\\""),
            b'\\' => out.push_str("\\\\"),
            b'?' => out.push_str("\\?"),
            0x20..=0x7e => out.push(b as char),
            _ => out.push_str(&format!("\\{b:03o}")),
        }
    }
    out.push('"');
    out
}

/// Java string literal with `\uXXXX` escapes for everything outside ASCII
/// printable.
fn java_literal(s: &str) -> String {
    let mut out = String::from("\"");
    for unit in s.encode_utf16() {
        match unit {
            0x22 => out.push_str("\\\""),
            0x5c => out.push_str("\\\\"),
            0x20..=0x7e => out.push(unit as u8 as char),
            _ => out.push_str(&format!("\\u{unit:04x}")),
        }
    }
    out.push('"');
    out
}

fn java_class_name(source: &str) -> Result<String, HarnessError> {
    let re =
        regex::Regex::new(r"(?m)^\s*(?:public\s+)?(?:final\s+)?class\s+([A-Za-z_][A-Za-z0-9_]*)")
            .expect("static regex");
    let public = regex::Regex::new(r"public\s+(?:final\s+)?class\s+([A-Za-z_][A-Za-z0-9_]*)")
        .expect("static regex");
    public
        .captures(source)
        .or_else(|| re.captures(source))
        .map(|c| c[1].to_string())
        .ok_or_else(|| HarnessError::TemplateError("no class declaration in Java source".into()))
}

/// Builds the files and commands for one payload. Deterministic in its inputs.
pub fn generate_harness(
    sample_id: &str,
    language: Language,
    source: &str,
    hypothesis: &ExploitHypothesis,
    payload: &Payload,
) -> Result<HarnessBundle, HarnessError> {
    let vector = hypothesis.attack_vector;
    let mut files = BTreeMap::new();
    let (entry_command, compile_command) = match language {
        Language::Python => {
            let literal = serde_json::to_string(&payload.data)
                .map_err(|e| HarnessError::TemplateError(e.to_string()))?;
            files.insert("target.py".to_string(), source.to_string());
            files.insert(
                "harness.py".to_string(),
                PY_HARNESS
                    .replace("__PAYLOAD__", &literal)
                    .replace("__VECTOR__", vector_name(vector)),
            );
            (vec!["python3".into(), "/work/harness.py".into()], None)
        }
        Language::Cpp => {
            if vector == AttackVector::Stdin {
                return Err(HarnessError::UnsupportedVector(vector));
            }
            files.insert("target.cpp".to_string(), source.to_string());
            files.insert(
                "harness.cpp".to_string(),
                CPP_HARNESS
                    .replace("__PAYLOAD__", &c_literal(&payload.data))
                    .replace("__VECTOR__", vector_name(vector)),
            );
            let mut compile: Vec<String> = vec!["g++".into()];
            compile.extend(CPP_FLAGS.iter().map(|s| s.to_string()));
            compile.extend(["target.cpp", "harness.cpp", "-o", "harness"].map(String::from));
            (vec!["/work/harness".into()], Some(compile))
        }
        Language::Java => {
            if vector != AttackVector::Argument {
                return Err(HarnessError::UnsupportedVector(vector));
            }
            let class = java_class_name(source)?;
            let payload_json = serde_json::to_string(&payload.data)
                .map_err(|e| HarnessError::TemplateError(e.to_string()))?;
            files.insert(format!("{class}.java"), source.to_string());
            files.insert(
                "VlfHarness.java".to_string(),
                JAVA_HARNESS
                    .replace("__PAYLOAD_JSON__", &java_literal(&payload_json))
                    .replace("__PAYLOAD__", &java_literal(&payload.data))
                    .replace("__CLASS__", &class),
            );
            let script = "javac -d /tmp/classes /work/*.java && java -cp /tmp/classes VlfHarness";
            (vec!["sh".into(), "-c".into(), script.into()], None)
        }
    };
    Ok(HarnessBundle {
        sample_id: sample_id.to_string(),
        payload_id: payload.id.clone(),
        marker: payload.marker.clone(),
        files,
        entry_command,
        compile_command,
    })
}
