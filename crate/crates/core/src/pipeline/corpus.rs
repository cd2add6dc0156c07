//! Bundled labeled desk corpus and the seeded train/val/test split.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::fusion::LabeledSample;
use crate::uast::detect_language;
use crate::validation::VulnClass;

pub struct SeedFile {
    pub path: &'static str,
    pub label: u8,
    pub class: Option<VulnClass>,
    pub source: &'static str,
}

macro_rules! vuln {
    ($path:literal, $class:ident, $src:expr) => {
        SeedFile {
            path: $path,
            label: 1,
            class: Some(VulnClass::$class),
            source: $src,
        }
    };
}

macro_rules! safe {
    ($path:literal, $src:expr) => {
        SeedFile {
            path: $path,
            label: 0,
            class: None,
            source: $src,
        }
    };
}

pub const SEED_CORPUS: &[SeedFile] = &[
    vuln!(
        "py/sqli_concat.py",
        SqlInjection,
        r#"import sqlite3


def handle(user):
    conn = sqlite3.connect(":memory:")
    cur = conn.cursor()
    cur.execute("CREATE TABLE users (name TEXT, role TEXT)")
    cur.execute("SELECT role FROM users WHERE name = '" + user + "'")
    return cur.fetchall()
"#
    ),
    vuln!(
        "py/sqli_fstring.py",
        SqlInjection,
        r#"import sqlite3


def handle(item_id):
    db = sqlite3.connect(":memory:")
    cur = db.cursor()
    cur.execute(f"SELECT * FROM items WHERE id = '{item_id}'")
    return cur.fetchall()
"#
    ),
    vuln!(
        "py/sqli_variable.py",
        SqlInjection,
        r#"import sqlite3

DB = sqlite3.connect(":memory:")


def handle(name):
    query = "DELETE FROM sessions WHERE owner = '" + name + "'"
    cur = DB.cursor()
    cur.execute(query)
    DB.commit()
"#
    ),
    vuln!(
        "py/cmdi_system.py",
        CommandInjection,
        r#"import os


def handle(host):
    return os.system("ping -c 1 " + host)
"#
    ),
    vuln!(
        "py/cmdi_shell.py",
        CommandInjection,
        r#"import subprocess


def handle(path):
    out = subprocess.check_output("ls -l " + path, shell=True)
    return out
"#
    ),
    vuln!(
        "py/cmdi_popen.py",
        CommandInjection,
        r#"import os


def handle(name):
    pipe = os.popen(f"grep -c {name} /var/log/app.log")
    return pipe.read()
"#
    ),
    vuln!(
        "py/path_join.py",
        PathTraversal,
        r#"import os

BASE = "/srv/uploads"


def handle(filename):
    with open(os.path.join(BASE, filename)) as fh:
        return fh.read()
"#
    ),
    vuln!(
        "py/path_concat.py",
        PathTraversal,
        r#"REPORTS = "/var/reports/"


def handle(name):
    f = open(REPORTS + name, "rb")
    data = f.read()
    f.close()
    return data
"#
    ),
    vuln!(
        "py/deser_pickle.py",
        InsecureDeserialization,
        r#"import pickle


def handle(blob):
    session = pickle.loads(blob.encode("latin-1"))
    return session
"#
    ),
    vuln!(
        "py/deser_yaml.py",
        InsecureDeserialization,
        r#"import yaml


def handle(doc):
    config = yaml.load(doc, Loader=yaml.Loader)
    return config
"#
    ),
    safe!(
        "py/safe_sqli_param.py",
        r#"import sqlite3


def handle(user):
    conn = sqlite3.connect(":memory:")
    cur = conn.cursor()
    cur.execute("CREATE TABLE users (name TEXT, role TEXT)")
    cur.execute("SELECT role FROM users WHERE name = ?", (user,))
    return cur.fetchall()
"#
    ),
    safe!(
        "py/safe_sqli_named.py",
        r#"import sqlite3


def handle(item_id):
    db = sqlite3.connect(":memory:")
    cur = db.cursor()
    cur.execute("SELECT * FROM items WHERE id = :id", {"id": item_id})
    return cur.fetchall()
"#
    ),
    safe!(
        "py/safe_sqli_many.py",
        r#"import sqlite3

DB = sqlite3.connect(":memory:")


def handle(names):
    rows = [(n.strip(),) for n in names.split(",")]
    cur = DB.cursor()
    cur.executemany("DELETE FROM sessions WHERE owner = ?", rows)
    DB.commit()
"#
    ),
    safe!(
        "py/safe_cmd_list.py",
        r#"import subprocess


def handle(host):
    return subprocess.run(["ping", "-c", "1", host], check=False)
"#
    ),
    safe!(
        "py/safe_cmd_allowlist.py",
        r#"import os
import re


def handle(host):
    if not re.fullmatch(r"[a-z0-9.-]+", host):
        raise ValueError("bad host")
    return os.system("ping -c 1 " + host)
"#
    ),
    safe!(
        "py/safe_cmd_argv.py",
        r#"import subprocess


def handle(name):
    proc = subprocess.Popen(["grep", "-c", name, "/var/log/app.log"], stdout=subprocess.PIPE)
    return proc
"#
    ),
    safe!(
        "py/safe_path_guard.py",
        r#"import os

BASE = "/srv/uploads"


def handle(filename):
    target = os.path.realpath(os.path.join(BASE, filename))
    if not target.startswith(BASE + os.sep):
        raise ValueError("outside upload dir")
    with open(target) as fh:
        return fh.read()
"#
    ),
    safe!(
        "py/safe_path_name.py",
        r#"REPORTS = "/var/reports/"


def handle(name):
    if "/" in name or name.startswith("."):
        raise ValueError("bad report name")
    with open(REPORTS + name, "rb") as f:
        return f.read()
"#
    ),
    safe!(
        "py/safe_json.py",
        r#"import json


def handle(blob):
    session = json.loads(blob)
    return session
"#
    ),
    safe!(
        "py/safe_yaml.py",
        r#"import yaml


def handle(doc):
    return yaml.safe_load(doc)
"#
    ),
    vuln!(
        "cpp/sqli_concat.cpp",
        SqlInjection,
        r#"#include <string>

extern "C" int mysql_query(void* conn, const char* q);

void handle(const std::string& input) {
    std::string q = "SELECT id FROM users WHERE name = '" + input + "'";
    mysql_query(nullptr, q.c_str());
}
"#
    ),
    vuln!(
        "cpp/sqli_append.cpp",
        SqlInjection,
        r#"#include <string>

extern "C" int mysql_query(void* conn, const char* q);

void handle(const std::string& input) {
    std::string q("UPDATE accounts SET active = 0 WHERE owner = '");
    q += input;
    q += "'";
    mysql_query(nullptr, q.c_str());
}
"#
    ),
    vuln!(
        "cpp/cmdi_system.cpp",
        CommandInjection,
        r#"#include <cstdlib>
#include <string>

void handle(const std::string& input) {
    std::string cmd = "ping -c 1 " + input;
    system(cmd.c_str());
}
"#
    ),
    vuln!(
        "cpp/cmdi_popen.cpp",
        CommandInjection,
        r#"#include <cstdio>
#include <string>

void handle(const std::string& input) {
    FILE* p = popen(("nslookup " + input).c_str(), "r");
    if (p) {
        pclose(p);
    }
}
"#
    ),
    vuln!(
        "cpp/cmdi_backup.cpp",
        CommandInjection,
        r#"#include <cstdlib>
#include <string>

void handle(const std::string& input) {
    system(("tar czf /tmp/backup.tgz " + input).c_str());
}
"#
    ),
    vuln!(
        "cpp/path_fopen.cpp",
        PathTraversal,
        r#"#include <cstdio>
#include <string>

void handle(const std::string& input) {
    std::string path = "/var/data/" + input;
    FILE* f = fopen(path.c_str(), "r");
    if (f) {
        fclose(f);
    }
}
"#
    ),
    vuln!(
        "cpp/path_log.cpp",
        PathTraversal,
        r#"#include <cstdio>
#include <string>

void handle(const std::string& input) {
    FILE* f = fopen(("/srv/logs/" + input + ".log").c_str(), "rb");
    if (f) {
        fclose(f);
    }
}
"#
    ),
    vuln!(
        "cpp/overflow_strcpy.cpp",
        MemoryCorruption,
        r#"#include <cstdio>
#include <cstring>
#include <string>

void handle(const std::string& input) {
    char buf[16];
    strcpy(buf, input.c_str());
    std::puts(buf);
}
"#
    ),
    vuln!(
        "cpp/overflow_sprintf.cpp",
        MemoryCorruption,
        r#"#include <cstdio>
#include <string>

void handle(const std::string& input) {
    char line[32];
    sprintf(line, "user=%s", input.c_str());
    std::puts(line);
}
"#
    ),
    vuln!(
        "cpp/overflow_strcat.cpp",
        MemoryCorruption,
        r#"#include <cstdio>
#include <cstring>
#include <string>

void handle(const std::string& input) {
    char msg[24] = "hello ";
    strcat(msg, input.c_str());
    std::puts(msg);
}
"#
    ),
    safe!(
        "cpp/safe_sqli_digits.cpp",
        r#"#include <algorithm>
#include <cctype>
#include <string>

extern "C" int mysql_query(void* conn, const char* q);

void handle(const std::string& input) {
    if (input.empty() || !std::all_of(input.begin(), input.end(), [](unsigned char c) { return std::isdigit(c); })) {
        return;
    }
    std::string q = "SELECT name FROM users WHERE id = " + input;
    mysql_query(nullptr, q.c_str());
}
"#
    ),
    safe!(
        "cpp/safe_sqli_alnum.cpp",
        r#"#include <algorithm>
#include <cctype>
#include <string>

extern "C" int mysql_query(void* conn, const char* q);

void handle(const std::string& input) {
    for (unsigned char c : input) {
        if (!std::isalnum(c)) {
            return;
        }
    }
    std::string q = "SELECT id FROM users WHERE name = '" + input + "'";
    mysql_query(nullptr, q.c_str());
}
"#
    ),
    safe!(
        "cpp/safe_cmd_allowlist.cpp",
        r#"#include <cstdlib>
#include <string>

void handle(const std::string& input) {
    if (input.find_first_not_of("abcdefghijklmnopqrstuvwxyz0123456789.-") != std::string::npos) {
        return;
    }
    std::string cmd = "ping -c 1 " + input;
    system(cmd.c_str());
}
"#
    ),
    safe!(
        "cpp/safe_cmd_fixed.cpp",
        r#"#include <cstdlib>
#include <string>

void handle(const std::string& input) {
    if (input == "status") {
        system("uptime");
    }
}
"#
    ),
    safe!(
        "cpp/safe_popen_fixed.cpp",
        r#"#include <cstdio>
#include <string>

void handle(const std::string& input) {
    FILE* p = popen("date +%Y", "r");
    if (!p) {
        return;
    }
    char year[8] = {0};
    if (std::fgets(year, sizeof year, p)) {
        std::printf("%d\n", input == year);
    }
    pclose(p);
}
"#
    ),
    safe!(
        "cpp/safe_path_reject.cpp",
        r#"#include <cstdio>
#include <string>

void handle(const std::string& input) {
    if (input.find("..") != std::string::npos || input.find('/') != std::string::npos) {
        return;
    }
    std::string path = "/var/data/" + input;
    FILE* f = fopen(path.c_str(), "r");
    if (f) {
        fclose(f);
    }
}
"#
    ),
    safe!(
        "cpp/safe_path_basename.cpp",
        r#"#include <cstdio>
#include <string>

void handle(const std::string& input) {
    std::string name = input.substr(input.find_last_of('/') + 1);
    if (name.empty() || name[0] == '.') {
        return;
    }
    FILE* f = fopen(("/srv/logs/" + name).c_str(), "rb");
    if (f) {
        fclose(f);
    }
}
"#
    ),
    safe!(
        "cpp/safe_snprintf.cpp",
        r#"#include <cstdio>
#include <string>

void handle(const std::string& input) {
    char line[32];
    std::snprintf(line, sizeof line, "user=%s", input.c_str());
    std::puts(line);
}
"#
    ),
    safe!(
        "cpp/safe_strncpy.cpp",
        r#"#include <cstdio>
#include <cstring>
#include <string>

void handle(const std::string& input) {
    char buf[16];
    std::strncpy(buf, input.c_str(), sizeof buf - 1);
    buf[sizeof buf - 1] = '\0';
    std::puts(buf);
}
"#
    ),
    safe!(
        "cpp/safe_string.cpp",
        r#"#include <cstdio>
#include <string>

void handle(const std::string& input) {
    std::string msg = "hello ";
    msg += input;
    std::printf("%zu\n", msg.size());
}
"#
    ),
    vuln!(
        "java/SqliConcat.java",
        SqlInjection,
        r#"import java.sql.Connection;
import java.sql.DriverManager;
import java.sql.ResultSet;
import java.sql.Statement;

public class SqliConcat {
    public static void handle(String user) throws Exception {
        Connection conn = DriverManager.getConnection("jdbc:h2:mem:app");
        Statement st = conn.createStatement();
        ResultSet rs = st.executeQuery("SELECT id FROM users WHERE name = '" + user + "'");
        rs.close();
    }
}
"#
    ),
    vuln!(
        "java/SqliUpdate.java",
        SqlInjection,
        r#"import java.sql.Connection;
import java.sql.DriverManager;
import java.sql.Statement;

public class SqliUpdate {
    public static void handle(String key) throws Exception {
        Connection conn = DriverManager.getConnection("jdbc:h2:mem:app");
        Statement st = conn.createStatement();
        String sql = "UPDATE flags SET on = 1 WHERE name = '" + key + "'";
        st.executeUpdate(sql);
    }
}
"#
    ),
    vuln!(
        "java/SqliDelete.java",
        SqlInjection,
        r#"import java.sql.Connection;
import java.sql.DriverManager;
import java.sql.Statement;

public class SqliDelete {
    public static void handle(String sid) throws Exception {
        Connection conn = DriverManager.getConnection("jdbc:h2:mem:app");
        Statement stmt = conn.createStatement();
        stmt.execute("DELETE FROM carts WHERE session = '" + sid + "'");
    }
}
"#
    ),
    vuln!(
        "java/CmdExec.java",
        CommandInjection,
        r#"public class CmdExec {
    public static void handle(String host) throws Exception {
        Process p = Runtime.getRuntime().exec("ping -c 1 " + host);
        p.waitFor();
    }
}
"#
    ),
    vuln!(
        "java/CmdBuilder.java",
        CommandInjection,
        r#"public class CmdBuilder {
    public static void handle(String dir) throws Exception {
        Process p = new ProcessBuilder("sh", "-c", "ls " + dir).start();
        p.waitFor();
    }
}
"#
    ),
    vuln!(
        "java/PathStream.java",
        PathTraversal,
        r#"import java.io.FileInputStream;

public class PathStream {
    public static void handle(String name) throws Exception {
        FileInputStream in = new FileInputStream("/srv/files/" + name);
        in.close();
    }
}
"#
    ),
    vuln!(
        "java/PathPaths.java",
        PathTraversal,
        r#"import java.nio.file.Files;
import java.nio.file.Paths;

public class PathPaths {
    public static void handle(String name) throws Exception {
        byte[] data = Files.readAllBytes(Paths.get("/srv/reports", name));
        System.out.println(data.length);
    }
}
"#
    ),
    vuln!(
        "java/PathReader.java",
        PathTraversal,
        r#"import java.io.BufferedReader;
import java.io.FileReader;

public class PathReader {
    static final String BASE = "/var/templates/";

    public static void handle(String name) throws Exception {
        BufferedReader r = new BufferedReader(new FileReader(BASE + name));
        r.close();
    }
}
"#
    ),
    vuln!(
        "java/DeserBytes.java",
        InsecureDeserialization,
        r#"import java.io.ByteArrayInputStream;
import java.io.ObjectInputStream;

public class DeserBytes {
    public static void handle(String input) throws Exception {
        ObjectInputStream in = new ObjectInputStream(new ByteArrayInputStream(input.getBytes("ISO-8859-1")));
        Object o = in.readObject();
        System.out.println(o);
    }
}
"#
    ),
    vuln!(
        "java/DeserBase64.java",
        InsecureDeserialization,
        r#"import java.io.ByteArrayInputStream;
import java.io.ObjectInputStream;
import java.util.Base64;

public class DeserBase64 {
    public static void handle(String input) throws Exception {
        byte[] raw = Base64.getDecoder().decode(input);
        ObjectInputStream ois = new ObjectInputStream(new ByteArrayInputStream(raw));
        Object session = ois.readObject();
        ois.close();
    }
}
"#
    ),
    safe!(
        "java/SafeSqliPrepared.java",
        r#"import java.sql.Connection;
import java.sql.DriverManager;
import java.sql.PreparedStatement;
import java.sql.ResultSet;

public class SafeSqliPrepared {
    public static void handle(String user) throws Exception {
        Connection conn = DriverManager.getConnection("jdbc:h2:mem:app");
        PreparedStatement ps = conn.prepareStatement("SELECT id FROM users WHERE name = ?");
        ps.setString(1, user);
        ResultSet rs = ps.executeQuery();
        rs.close();
    }
}
"#
    ),
    safe!(
        "java/SafeSqliUpdate.java",
        r#"import java.sql.Connection;
import java.sql.DriverManager;
import java.sql.PreparedStatement;

public class SafeSqliUpdate {
    public static void handle(String key) throws Exception {
        Connection conn = DriverManager.getConnection("jdbc:h2:mem:app");
        PreparedStatement ps = conn.prepareStatement("UPDATE flags SET on = 1 WHERE name = ?");
        ps.setString(1, key);
        ps.executeUpdate();
    }
}
"#
    ),
    safe!(
        "java/SafeSqliNumeric.java",
        r#"import java.sql.Connection;
import java.sql.DriverManager;
import java.sql.Statement;

public class SafeSqliNumeric {
    public static void handle(String id) throws Exception {
        long n = Long.parseLong(id);
        Connection conn = DriverManager.getConnection("jdbc:h2:mem:app");
        Statement stmt = conn.createStatement();
        stmt.execute("DELETE FROM carts WHERE id = " + n);
    }
}
"#
    ),
    safe!(
        "java/SafeCmdArray.java",
        r#"public class SafeCmdArray {
    public static void handle(String host) throws Exception {
        Process p = Runtime.getRuntime().exec(new String[]{"ping", "-c", "1", host});
        p.waitFor();
    }
}
"#
    ),
    safe!(
        "java/SafeCmdBuilder.java",
        r#"public class SafeCmdBuilder {
    public static void handle(String dir) throws Exception {
        Process p = new ProcessBuilder("ls", "--", dir).start();
        p.waitFor();
    }
}
"#
    ),
    safe!(
        "java/SafePathCanonical.java",
        r#"import java.io.File;
import java.io.FileInputStream;

public class SafePathCanonical {
    public static void handle(String name) throws Exception {
        File base = new File("/srv/files");
        File f = new File(base, name);
        if (!f.getCanonicalPath().startsWith(base.getCanonicalPath() + File.separator)) {
            throw new SecurityException("outside base");
        }
        FileInputStream in = new FileInputStream(f);
        in.close();
    }
}
"#
    ),
    safe!(
        "java/SafePathName.java",
        r#"import java.nio.file.Files;
import java.nio.file.Paths;

public class SafePathName {
    public static void handle(String name) throws Exception {
        if (!name.matches("[a-z0-9_-]+\\.txt")) {
            return;
        }
        byte[] data = Files.readAllBytes(Paths.get("/srv/reports", name));
        System.out.println(data.length);
    }
}
"#
    ),
    safe!(
        "java/SafeDeserFilter.java",
        r#"import java.io.ByteArrayInputStream;
import java.io.ObjectInputFilter;
import java.io.ObjectInputStream;

public class SafeDeserFilter {
    public static void handle(String input) throws Exception {
        ObjectInputStream in = new ObjectInputStream(new ByteArrayInputStream(input.getBytes("ISO-8859-1")));
        in.setObjectInputFilter(ObjectInputFilter.Config.createFilter("java.lang.String;!*"));
        Object o = in.readObject();
        System.out.println(o);
    }
}
"#
    ),
    safe!(
        "java/SafeParse.java",
        r#"import java.util.HashMap;
import java.util.Map;

public class SafeParse {
    public static void handle(String input) {
        Map<String, String> fields = new HashMap<>();
        for (String pair : input.split("&")) {
            int eq = pair.indexOf('=');
            if (eq > 0) {
                fields.put(pair.substring(0, eq), pair.substring(eq + 1));
            }
        }
        System.out.println(fields.size());
    }
}
"#
    ),
    safe!(
        "java/SafeGreeting.java",
        r#"public class SafeGreeting {
    public static void handle(String name) {
        StringBuilder sb = new StringBuilder("hello ");
        sb.append(name.trim());
        System.out.println(sb.length());
    }
}
"#
    ),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLists {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Writes every bundled file plus `labels.json` (id to 0/1) and
/// `classes.json` (id to class, vulnerable files only).
pub fn seed_corpus(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut written = Vec::new();
    let mut labels = BTreeMap::new();
    let mut classes = BTreeMap::new();
    for f in SEED_CORPUS {
        let path = dir.join(f.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
        fs::write(&path, f.source).map_err(|e| PipelineError::io(&path, e))?;
        labels.insert(f.path.to_string(), f.label);
        if let Some(c) = f.class {
            classes.insert(f.path.to_string(), c);
        }
        written.push(path);
    }
    write_json(&dir.join("labels.json"), &labels)?;
    write_json(&dir.join("classes.json"), &classes)?;
    Ok(written)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| PipelineError::Serde(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<BTreeMap<String, u8>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Serde(format!("{}: {e}", path.display())))
}

/// Every file named in `dir/labels.json`, with its label.
pub fn labeled_samples(dir: &Path) -> Result<Vec<LabeledSample>, PipelineError> {
    let labels = load_labels(&dir.join("labels.json"))?;
    labels
        .into_iter()
        .map(|(id, label)| {
            let path = dir.join(&id);
            let source = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
            let language = detect_language(&path, source.as_bytes())
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            Ok(LabeledSample {
                id,
                language,
                source,
                label,
            })
        })
        .collect()
}

/// 80/10/10 split of the sorted ids, shuffled with `seed`.
pub fn split(ids: &[String], seed: u64) -> SplitLists {
    let mut ids = ids.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    SplitLists {
        seed,
        train: ids,
        val,
        test,
    }
}
