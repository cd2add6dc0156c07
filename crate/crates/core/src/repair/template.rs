//! Class-specific rewrites applied at the flagged sink.

use super::{Edit, PatchEdit, RepairError, RepairPrompt};
use crate::uast::{parse_to_uast, Language, UastDocument, UniversalCategory as C};
use crate::validation::sinks::{find_sinks, node_source, SinkHit};
use crate::validation::VulnClass;

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Lit(String),
    Expr(String),
}

struct Ctx<'a> {
    doc: &'a UastDocument,
    src: &'a str,
    lang: Language,
}

fn inapplicable(msg: impl Into<String>) -> RepairError {
    RepairError::TemplateInapplicable(msg.into())
}

const STRING_PREFIXES: &[char] = &['r', 'R', 'b', 'B', 'u', 'U', 'f', 'F', 'L'];

/// Literal body and its quote, e.g. `f"a {x}"` gives (`a {x}`, `"`).
fn literal_body(text: &str) -> Option<(&str, &'static str)> {
    let t = text.trim_start_matches(STRING_PREFIXES);
    for q in ["\"\"\"", "'''", "\"", "'"] {
        if t.len() >= 2 * q.len() && t.starts_with(q) && t.ends_with(q) {
            return Some((&t[q.len()..t.len() - q.len()], q));
        }
    }
    None
}

impl<'a> Ctx<'a> {
    fn text(&self, i: usize) -> &'a str {
        node_source(self.src, &self.doc.nodes[i])
    }

    fn kids(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.doc.nodes[i].children.iter().copied()
    }

    fn is_punct(&self, i: usize) -> bool {
        matches!(self.doc.nodes[i].universal_category, C::Punctuation)
    }

    /// Positional argument expressions of an argument list.
    fn args(&self, list: usize) -> Vec<usize> {
        self.kids(list)
            .filter(|&c| !self.is_punct(c) && self.doc.nodes[c].native_type != "keyword_argument")
            .collect()
    }

    fn hit_args(&self, hit: &SinkHit) -> Vec<usize> {
        hit.args.map(|a| self.args(a)).unwrap_or_default()
    }

    /// The statement containing `node` that sits directly in a block.
    fn statement(&self, node: usize) -> usize {
        let mut cur = node;
        while let Some(p) = self.doc.nodes[cur].parent {
            if matches!(self.doc.nodes[p].universal_category, C::Block | C::Module) {
                return cur;
            }
            cur = p;
        }
        cur
    }

    fn indent(&self, pos: usize) -> &'a str {
        let line_start = self.src[..pos].rfind('\n').map(|i| i + 1).unwrap_or(0);
        let lead = &self.src[line_start..pos];
        &lead[..lead.len() - lead.trim_start().len()]
    }

    fn enclosing_function(&self, node: usize) -> Option<usize> {
        self.doc
            .ancestors(node)
            .find(|a| a.universal_category == C::FunctionDeclaration)
            .map(|a| a.index)
    }

    /// Right-hand side of the last `name = rhs` before `before`. Covers
    /// plain assignments and declarators in all three grammars.
    fn assignment_of(&self, name: &str, scope: usize, before: usize) -> Option<(usize, usize)> {
        let limit = self.doc.nodes[before].span.start_byte;
        self.doc
            .descendants(scope)
            .into_iter()
            .filter(|&d| self.doc.nodes[d].span.end_byte <= limit)
            .filter_map(|d| {
                let kids: Vec<usize> = self.kids(d).collect();
                let eq = kids
                    .iter()
                    .position(|&c| self.doc.nodes[c].is_leaf() && self.doc.nodes[c].text == "=")?;
                let target = kids[..eq].iter().rev().find(|&&c| !self.is_punct(c))?;
                let t = &self.doc.nodes[*target];
                if t.universal_category != C::Identifier || t.text != name {
                    return None;
                }
                let rhs = kids[eq + 1..].iter().find(|&&c| !self.is_punct(c))?;
                Some((d, *rhs))
            })
            .last()
    }

    fn identifiers(&self, node: usize) -> Vec<String> {
        self.doc
            .descendants(node)
            .into_iter()
            .filter(|&d| {
                let n = &self.doc.nodes[d];
                n.universal_category == C::Identifier && n.native_type == "identifier"
            })
            .map(|d| self.doc.nodes[d].text.clone())
            .collect()
    }

    /// Names that feed `node`, following locals defined or updated earlier
    /// in `scope` to a fixed point.
    fn flowing_names(&self, node: usize, scope: usize) -> Vec<String> {
        let mut names = self.identifiers(node);
        let limit = self.doc.nodes[node].span.start_byte;
        let writes: Vec<usize> = self
            .doc
            .descendants(scope)
            .into_iter()
            .filter(|&d| {
                let n = &self.doc.nodes[d];
                matches!(
                    n.universal_category,
                    C::VariableAssignment | C::VariableDeclaration
                ) && n.span.end_byte <= limit
            })
            .collect();
        loop {
            let before = names.len();
            for &w in &writes {
                let ids = self.identifiers(w);
                if ids.iter().any(|i| names.contains(i)) {
                    for i in ids {
                        if !names.contains(&i) {
                            names.push(i);
                        }
                    }
                }
            }
            if names.len() == before {
                return names;
            }
        }
    }

    fn binary_plus(&self, i: usize) -> Option<(usize, usize)> {
        let n = &self.doc.nodes[i];
        if n.universal_category != C::BinaryOperation {
            return None;
        }
        let kids: Vec<usize> = n.children.clone();
        let op = kids
            .iter()
            .position(|&c| self.doc.nodes[c].is_leaf() && self.doc.nodes[c].text == "+")?;
        let left = kids[..op].iter().rev().find(|&&c| !self.is_punct(c))?;
        let right = kids[op + 1..].iter().find(|&&c| !self.is_punct(c))?;
        Some((*left, *right))
    }

    /// Flattens `+` chains, f-strings and string wrappers into pieces.
    fn pieces(&self, i: usize) -> Vec<Piece> {
        let n = &self.doc.nodes[i];
        if let Some((l, r)) = self.binary_plus(i) {
            let mut out = self.pieces(l);
            out.extend(self.pieces(r));
            return out;
        }
        match n.universal_category {
            C::ParenthesizedExpression => {
                if let Some(inner) = self.kids(i).find(|&c| !self.is_punct(c)) {
                    return self.pieces(inner);
                }
            }
            C::StringLiteral => {
                let interp: Vec<usize> = self.kids(i).collect();
                if interp
                    .iter()
                    .any(|&c| self.doc.nodes[c].native_type == "interpolation")
                {
                    let mut out = Vec::new();
                    for c in interp {
                        let k = &self.doc.nodes[c];
                        match k.native_type.as_str() {
                            "string_start" | "string_end" => {}
                            "interpolation" => {
                                let inner: Vec<&str> = self
                                    .kids(c)
                                    .filter(|&g| !self.is_punct(g))
                                    .take(1)
                                    .map(|g| self.text(g))
                                    .collect();
                                out.push(Piece::Expr(inner.concat()));
                            }
                            _ => out.push(Piece::Lit(self.text(c).to_string())),
                        }
                    }
                    return out;
                }
                if let Some((body, _)) = literal_body(self.text(i)) {
                    return vec![Piece::Lit(body.to_string())];
                }
            }
            C::Call => {
                let callee_end = n
                    .children
                    .iter()
                    .find(|&&c| self.doc.nodes[c].universal_category == C::ArgumentList)
                    .map(|&c| self.doc.nodes[c].span.start_byte)
                    .unwrap_or(n.span.end_byte);
                let callee = self.src[n.span.start_byte..callee_end].trim();
                // `std::string("x")` and `(a + b).c_str()` keep their pieces
                if callee == "std::string" || callee == "string" {
                    if let Some(list) = self
                        .kids(i)
                        .find(|&c| self.doc.nodes[c].universal_category == C::ArgumentList)
                    {
                        if let [one] = self.args(list)[..] {
                            return self.pieces(one);
                        }
                    }
                }
                if let Some(recv) = callee
                    .strip_suffix(".c_str")
                    .or_else(|| callee.strip_suffix(".data"))
                {
                    let target = self
                        .doc
                        .descendants(i)
                        .into_iter()
                        .find(|&d| d != i && self.text(d) == recv);
                    if let Some(t) = target {
                        return self.pieces(t);
                    }
                }
            }
            _ => {}
        }
        vec![Piece::Expr(self.text(i).to_string())]
    }

    /// Pieces of a dynamic argument, looking through one local variable.
    fn dynamic_pieces(&self, arg: usize, hit: &SinkHit) -> Option<(Vec<Piece>, Option<usize>)> {
        let pieces = self.pieces(arg);
        if pieces.iter().any(|p| matches!(p, Piece::Lit(_))) && pieces.len() > 1 {
            return Some((pieces, None));
        }
        let n = &self.doc.nodes[arg];
        if n.universal_category != C::Identifier {
            return None;
        }
        let scope = self.enclosing_function(hit.node).unwrap_or(0);
        let (_, rhs) = self.assignment_of(&n.text, scope, hit.node)?;
        let pieces = self.pieces(rhs);
        (pieces.len() > 1).then_some((pieces, Some(rhs)))
    }

    fn names_parameters(&self, func: usize) -> Vec<String> {
        self.doc
            .descendants(func)
            .into_iter()
            .filter(|&d| self.doc.nodes[d].universal_category == C::Parameter)
            .filter_map(|p| {
                self.doc
                    .descendants(p)
                    .into_iter()
                    .filter(|&d| {
                        let n = &self.doc.nodes[d];
                        n.universal_category == C::Identifier && n.native_type == "identifier"
                    })
                    .last()
                    .map(|d| self.doc.nodes[d].text.clone())
            })
            .collect()
    }
}

/// Placeholder query and its parameters; quotes around a placeholder go.
fn parameterize(pieces: &[Piece]) -> (String, Vec<String>) {
    let mut query = String::new();
    let mut params = Vec::new();
    let mut strip_next_quote = false;
    for (i, p) in pieces.iter().enumerate() {
        match p {
            Piece::Lit(s) => {
                let s = if strip_next_quote {
                    s.strip_prefix('\'').unwrap_or(s)
                } else {
                    s
                };
                strip_next_quote = false;
                query.push_str(s);
            }
            Piece::Expr(e) => {
                let quoted = query.ends_with('\'')
                    && matches!(pieces.get(i + 1), Some(Piece::Lit(n)) if n.starts_with('\''));
                if quoted {
                    query.pop();
                    strip_next_quote = true;
                }
                query.push('?');
                params.push(e.clone());
            }
        }
    }
    (query, params)
}

/// Splits a command string into argv tokens; expressions glued to literal
/// text stay in the same token.
fn argv_tokens(pieces: &[Piece]) -> Vec<Vec<Piece>> {
    let mut tokens: Vec<Vec<Piece>> = Vec::new();
    let mut cur: Vec<Piece> = Vec::new();
    for p in pieces {
        match p {
            Piece::Expr(_) => cur.push(p.clone()),
            Piece::Lit(s) => {
                let mut word = String::new();
                for ch in s.chars() {
                    if ch.is_whitespace() {
                        if !word.is_empty() {
                            cur.push(Piece::Lit(std::mem::take(&mut word)));
                        }
                        if !cur.is_empty() {
                            tokens.push(std::mem::take(&mut cur));
                        }
                    } else {
                        word.push(ch);
                    }
                }
                if !word.is_empty() {
                    cur.push(Piece::Lit(word));
                }
            }
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn render_token(token: &[Piece], quote: &str) -> String {
    token
        .iter()
        .map(|p| match p {
            Piece::Lit(s) => format!("{quote}{s}{quote}"),
            Piece::Expr(e) => e.clone(),
        })
        .collect::<Vec<_>>()
        .join(" + ")
}

fn ensure_python_import(src: &str, module: &str) -> Option<Edit> {
    let present = src.lines().any(|l| {
        let l = l.trim();
        l == format!("import {module}")
            || l.starts_with(&format!("import {module} "))
            || l.starts_with(&format!("import {module},"))
            || (l.starts_with("import ") && l.split([',', ' ']).any(|w| w == module))
    });
    (!present).then(|| Edit::insert(0, format!("import {module}\n")))
}

fn ensure_include(src: &str, header: &str) -> Option<Edit> {
    let present = src.lines().any(|l| {
        let l: String = l.split_whitespace().collect();
        l == format!("#include<{header}>")
    });
    (!present).then(|| Edit::insert(0, format!("#include <{header}>\n")))
}

/// Sorts and fuses touching edits so the result satisfies the patch checks.
fn finish(mut edits: Vec<Edit>) -> PatchEdit {
    edits.sort_by_key(|e| (e.start_byte, e.end_byte));
    let mut out: Vec<Edit> = Vec::new();
    for e in edits {
        if let Some(last) = out.last_mut() {
            if e.start_byte == last.end_byte
                && (last.start_byte == last.end_byte || e.start_byte == e.end_byte)
            {
                last.replacement.push_str(&e.replacement);
                last.end_byte = e.end_byte;
                continue;
            }
        }
        out.push(e);
    }
    PatchEdit { edits: out }
}

fn pick_hit(
    hits: &[SinkHit],
    class: VulnClass,
    prefer: impl Fn(&SinkHit) -> bool,
) -> Option<SinkHit> {
    let of_class: Vec<&SinkHit> = hits.iter().filter(|h| h.class == class).collect();
    of_class
        .iter()
        .find(|h| prefer(h))
        .or_else(|| of_class.iter().find(|h| h.concatenated))
        .or_else(|| of_class.first())
        .map(|h| (*h).clone())
}

pub fn template_patch(prompt: &RepairPrompt) -> Result<PatchEdit, RepairError> {
    let doc = parse_to_uast(prompt.source.as_bytes(), prompt.language)?;
    let cx = Ctx {
        doc: &doc,
        src: &prompt.source,
        lang: prompt.language,
    };
    let hits = find_sinks(&doc, &prompt.source);
    let edits = match (cx.lang, prompt.vuln_class) {
        (_, VulnClass::Other) => return Err(RepairError::UnpatchableClass(VulnClass::Other)),
        (Language::Python, VulnClass::MemoryCorruption)
        | (Language::Java, VulnClass::MemoryCorruption) => {
            return Err(RepairError::UnpatchableClass(VulnClass::MemoryCorruption))
        }
        (Language::Cpp, VulnClass::MemoryCorruption) => cpp_memory(&cx, &hits)?,
        (Language::Cpp, class) => cpp_guard(&cx, &hits, class)?,
        (Language::Python, VulnClass::SqlInjection) => python_sql(&cx, &hits)?,
        (Language::Python, VulnClass::CommandInjection) => python_cmd(&cx, &hits)?,
        (Language::Python, VulnClass::PathTraversal) => python_path(&cx, &hits)?,
        (Language::Python, VulnClass::InsecureDeserialization) => python_deser(&cx, &hits)?,
        (Language::Java, VulnClass::SqlInjection) => java_sql(&cx, &hits)?,
        (Language::Java, VulnClass::CommandInjection) => java_cmd(&cx, &hits)?,
        (Language::Java, VulnClass::PathTraversal) => java_path(&cx, &hits)?,
        (Language::Java, VulnClass::InsecureDeserialization) => java_deser(&cx, &hits)?,
    };
    Ok(finish(edits))
}

fn require(hit: Option<SinkHit>, class: VulnClass) -> Result<SinkHit, RepairError> {
    hit.ok_or_else(|| inapplicable(format!("no {class} sink in the source")))
}

fn python_sql(cx: &Ctx<'_>, hits: &[SinkHit]) -> Result<Vec<Edit>, RepairError> {
    let hit = require(
        pick_hit(hits, VulnClass::SqlInjection, |_| false),
        VulnClass::SqlInjection,
    )?;
    let args = cx.hit_args(&hit);
    let first = *args
        .first()
        .ok_or_else(|| inapplicable("query call without arguments"))?;
    let (pieces, rhs) = cx
        .dynamic_pieces(first, &hit)
        .ok_or_else(|| inapplicable("query is not built dynamically"))?;
    let (query, params) = parameterize(&pieces);
    let quote = cx
        .doc
        .descendants(rhs.unwrap_or(first))
        .into_iter()
        .find(|&d| cx.doc.nodes[d].universal_category == C::StringLiteral)
        .and_then(|d| literal_body(cx.text(d)))
        .map(|(_, q)| q)
        .unwrap_or("\"");
    let quote = if query.contains(quote) {
        "\"\"\""
    } else {
        quote
    };
    let literal = format!("{quote}{query}{quote}");
    let tuple = format!("({},)", params.join(", "));
    let list = hit.args.expect("checked above");
    let mut edits = Vec::new();
    match rhs {
        None => edits.push(Edit::replace(
            &cx.doc.nodes[list].span,
            format!("({literal}, {tuple})"),
        )),
        Some(rhs) => {
            edits.push(Edit::replace(&cx.doc.nodes[rhs].span, literal));
            edits.push(Edit::replace(
                &cx.doc.nodes[list].span,
                format!("({}, {tuple})", cx.text(first)),
            ));
        }
    }
    Ok(edits)
}

fn python_cmd(cx: &Ctx<'_>, hits: &[SinkHit]) -> Result<Vec<Edit>, RepairError> {
    let hit = require(
        pick_hit(hits, VulnClass::CommandInjection, |_| false),
        VulnClass::CommandInjection,
    )?;
    let args = cx.hit_args(&hit);
    let first = *args
        .first()
        .ok_or_else(|| inapplicable("command call without arguments"))?;
    let pieces = cx
        .dynamic_pieces(first, &hit)
        .map(|(p, _)| p)
        .unwrap_or_else(|| vec![Piece::Expr(cx.text(first).to_string())]);
    let tokens = argv_tokens(&pieces);
    let argv = format!(
        "[{}]",
        tokens
            .iter()
            .map(|t| render_token(t, "\""))
            .collect::<Vec<_>>()
            .join(", ")
    );
    let call = match hit.callee.as_str() {
        "os.system" => format!("subprocess.call({argv})"),
        "os.popen" => format!("subprocess.Popen({argv}, stdout=subprocess.PIPE, text=True).stdout"),
        c if c.starts_with("subprocess.") => format!("{c}({argv})"),
        other => return Err(inapplicable(format!("no argv form for `{other}`"))),
    };
    let mut edits = vec![Edit::replace(&cx.doc.nodes[hit.node].span, call)];
    edits.extend(ensure_python_import(cx.src, "subprocess"));
    Ok(edits)
}

/// Directory a path expression is anchored to, when it can be read off.
fn python_base(cx: &Ctx<'_>, arg: usize, hit: &SinkHit, depth: usize) -> Option<String> {
    let n = &cx.doc.nodes[arg];
    if n.universal_category == C::Call {
        let list = cx
            .kids(arg)
            .find(|&c| cx.doc.nodes[c].universal_category == C::ArgumentList)?;
        let callee = cx.src[n.span.start_byte..cx.doc.nodes[list].span.start_byte].trim();
        if callee == "os.path.join" {
            return cx.args(list).first().map(|&a| cx.text(a).to_string());
        }
    }
    if let Some((l, _)) = cx.binary_plus(arg) {
        return Some(cx.text(l).to_string());
    }
    if n.universal_category == C::Identifier && depth == 0 {
        let scope = cx.enclosing_function(hit.node).unwrap_or(0);
        let (_, rhs) = cx.assignment_of(&n.text, scope, hit.node)?;
        return python_base(cx, rhs, hit, 1);
    }
    None
}

fn python_path(cx: &Ctx<'_>, hits: &[SinkHit]) -> Result<Vec<Edit>, RepairError> {
    let hit = require(
        pick_hit(hits, VulnClass::PathTraversal, |_| false),
        VulnClass::PathTraversal,
    )?;
    let first = *cx
        .hit_args(&hit)
        .first()
        .ok_or_else(|| inapplicable("open without a path"))?;
    let base = python_base(cx, first, &hit, 0).unwrap_or_else(|| "os.getcwd()".into());
    let stmt = cx.statement(hit.node);
    let at = cx.doc.nodes[stmt].span.start_byte;
    let ind = cx.indent(at);
    let guard = format!(
        "if not os.path.realpath({path}).startswith(os.path.realpath({base}) + os.sep):\n{ind}    raise ValueError(\"path escapes the base directory\")\n{ind}",
        path = cx.text(first),
    );
    let mut edits = vec![Edit::insert(at, guard)];
    edits.extend(ensure_python_import(cx.src, "os"));
    Ok(edits)
}

fn python_deser(cx: &Ctx<'_>, hits: &[SinkHit]) -> Result<Vec<Edit>, RepairError> {
    let hit = require(
        pick_hit(hits, VulnClass::InsecureDeserialization, |_| false),
        VulnClass::InsecureDeserialization,
    )?;
    let list = hit
        .args
        .ok_or_else(|| inapplicable("deserializer call without arguments"))?;
    let callee_span = crate::uast::SourceSpan {
        end_byte: cx.doc.nodes[list].span.start_byte,
        ..cx.doc.nodes[hit.node].span.clone()
    };
    let mut edits = Vec::new();
    match hit.callee.as_str() {
        "pickle.loads" | "pickle.load" => {
            let json = if hit.callee.ends_with("loads") {
                "json.loads"
            } else {
                "json.load"
            };
            edits.push(Edit::replace(&callee_span, json));
            edits.extend(ensure_python_import(cx.src, "json"));
        }
        "yaml.load" => {
            let first = *cx
                .args(list)
                .first()
                .ok_or_else(|| inapplicable("yaml.load without input"))?;
            edits.push(Edit::replace(
                &cx.doc.nodes[hit.node].span,
                format!("yaml.safe_load({})", cx.text(first)),
            ));
        }
        other => return Err(inapplicable(format!("no safe form for `{other}`"))),
    }
    Ok(edits)
}

fn receiver(callee: &str) -> Option<(&str, &str)> {
    callee.rsplit_once('.')
}

fn java_sql(cx: &Ctx<'_>, hits: &[SinkHit]) -> Result<Vec<Edit>, RepairError> {
    let hit = require(
        pick_hit(hits, VulnClass::SqlInjection, |_| false),
        VulnClass::SqlInjection,
    )?;
    let (recv, method) =
        receiver(&hit.callee).ok_or_else(|| inapplicable("query call without a receiver"))?;
    let first = *cx
        .hit_args(&hit)
        .first()
        .ok_or_else(|| inapplicable("query call without arguments"))?;
    let (pieces, _) = cx
        .dynamic_pieces(first, &hit)
        .ok_or_else(|| inapplicable("query is not built dynamically"))?;
    let (query, params) = parameterize(&pieces);
    let stmt = cx.statement(hit.node);
    let at = cx.doc.nodes[stmt].span.start_byte;
    let ind = cx.indent(at);
    let mut prelude = format!("java.sql.PreparedStatement vlfStmt = {recv}.getConnection().prepareStatement(\"{query}\");\n{ind}");
    for (i, p) in params.iter().enumerate() {
        prelude.push_str(&format!(
            "vlfStmt.setString({}, String.valueOf({p}));\n{ind}",
            i + 1
        ));
    }
    Ok(vec![
        Edit::insert(at, prelude),
        Edit::replace(&cx.doc.nodes[hit.node].span, format!("vlfStmt.{method}()")),
    ])
}

fn java_cmd(cx: &Ctx<'_>, hits: &[SinkHit]) -> Result<Vec<Edit>, RepairError> {
    let hit = require(
        pick_hit(hits, VulnClass::CommandInjection, |_| false),
        VulnClass::CommandInjection,
    )?;
    let list = hit
        .args
        .ok_or_else(|| inapplicable("command call without arguments"))?;
    let args = cx.args(list);
    let shell_wrapped = args.len() == 3
        && matches!(
            literal_body(cx.text(args[0])),
            Some(("sh" | "bash" | "/bin/sh", _))
        )
        && matches!(literal_body(cx.text(args[1])), Some(("-c", _)));
    let command = if shell_wrapped {
        args[2]
    } else if args.len() == 1 {
        args[0]
    } else {
        return Err(inapplicable("command is already an argument vector"));
    };
    let pieces = cx
        .dynamic_pieces(command, &hit)
        .map(|(p, _)| p)
        .ok_or_else(|| inapplicable("command is not built dynamically"))?;
    let tokens: Vec<String> = argv_tokens(&pieces)
        .iter()
        .map(|t| render_token(t, "\""))
        .collect();
    let replacement = if hit.callee.starts_with("new ") {
        format!("({})", tokens.join(", "))
    } else {
        format!("(new String[]{{{}}})", tokens.join(", "))
    };
    Ok(vec![Edit::replace(&cx.doc.nodes[list].span, replacement)])
}

fn java_path(cx: &Ctx<'_>, hits: &[SinkHit]) -> Result<Vec<Edit>, RepairError> {
    let hit = require(
        pick_hit(hits, VulnClass::PathTraversal, |h| {
            h.callee.starts_with("new ") || h.callee.ends_with(".get") || h.callee.ends_with(".of")
        }),
        VulnClass::PathTraversal,
    )?;
    let args = cx.hit_args(&hit);
    let first = *args
        .first()
        .ok_or_else(|| inapplicable("path call without arguments"))?;
    let joined = args
        .iter()
        .map(|&a| cx.text(a))
        .collect::<Vec<_>>()
        .join(", ");
    let file = if hit.callee.starts_with("new ") {
        format!("new java.io.File({joined})")
    } else if hit.callee.ends_with(".get") || hit.callee.ends_with(".of") {
        format!("java.nio.file.Paths.get({joined}).toFile()")
    } else {
        format!("({}).toFile()", cx.text(first))
    };
    let base = if args.len() >= 2 {
        cx.text(first).to_string()
    } else if let Some((l, _)) = cx.binary_plus(first) {
        cx.text(l).to_string()
    } else {
        "\".\"".to_string()
    };
    let stmt = cx.statement(hit.node);
    let at = cx.doc.nodes[stmt].span.start_byte;
    let ind = cx.indent(at);
    let guard = format!(
        "if (!{file}.getCanonicalPath().startsWith(new java.io.File({base}).getCanonicalPath() + java.io.File.separator)) {{\n{ind}    throw new SecurityException(\"path escapes the base directory\");\n{ind}}}\n{ind}"
    );
    Ok(vec![Edit::insert(at, guard)])
}

fn java_deser(cx: &Ctx<'_>, hits: &[SinkHit]) -> Result<Vec<Edit>, RepairError> {
    let hit = hits
        .iter()
        .find(|h| {
            h.class == VulnClass::InsecureDeserialization && h.callee.ends_with(".readObject")
        })
        .ok_or_else(|| inapplicable("no readObject call"))?;
    let (recv, _) =
        receiver(&hit.callee).ok_or_else(|| inapplicable("readObject without a receiver"))?;
    let stmt = cx.statement(hit.node);
    let at = cx.doc.nodes[stmt].span.start_byte;
    let ind = cx.indent(at);
    let guard = format!(
        "{recv}.setObjectInputFilter(java.io.ObjectInputFilter.Config.createFilter(\"java.lang.*;java.util.*;!*\"));\n{ind}"
    );
    Ok(vec![Edit::insert(at, guard)])
}

fn cpp_guard(cx: &Ctx<'_>, hits: &[SinkHit], class: VulnClass) -> Result<Vec<Edit>, RepairError> {
    let hit = require(pick_hit(hits, class, |_| false), class)?;
    let func = cx
        .enclosing_function(hit.node)
        .ok_or_else(|| inapplicable("sink outside a function"))?;
    let params = cx.names_parameters(func);
    let list = hit
        .args
        .ok_or_else(|| inapplicable("sink call without arguments"))?;
    let flowing = cx.flowing_names(list, func);
    let used: Vec<String> = params.into_iter().filter(|p| flowing.contains(p)).collect();
    if used.is_empty() {
        return Err(inapplicable("no parameter reaches the sink"));
    }
    let stmt = cx.statement(hit.node);
    let at = cx.doc.nodes[stmt].span.start_byte;
    let ind = cx.indent(at);
    let mut guard = String::new();
    for p in &used {
        let cond = match class {
            VulnClass::SqlInjection => format!("std::string({p}).find_first_of(\"'\\\"\\\\;\") != std::string::npos"),
            VulnClass::CommandInjection => format!(
                "std::string({p}).find_first_not_of(\"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-\") != std::string::npos"
            ),
            VulnClass::PathTraversal => format!(
                "std::string({p}).find(\"..\") != std::string::npos || std::string({p}).rfind(\"/\", 0) == 0"
            ),
            VulnClass::InsecureDeserialization => return Err(RepairError::UnpatchableClass(class)),
            _ => unreachable!("handled by the caller"),
        };
        guard.push_str(&format!(
            "if ({cond}) {{\n{ind}    throw std::invalid_argument(\"rejected input\");\n{ind}}}\n{ind}"
        ));
    }
    let mut edits = vec![Edit::insert(at, guard)];
    edits.extend(ensure_include(cx.src, "stdexcept"));
    edits.extend(ensure_include(cx.src, "string"));
    Ok(edits)
}

fn cpp_memory(cx: &Ctx<'_>, hits: &[SinkHit]) -> Result<Vec<Edit>, RepairError> {
    let mut edits = Vec::new();
    let mut needs_algorithm = false;
    for hit in hits
        .iter()
        .filter(|h| h.class == VulnClass::MemoryCorruption)
    {
        let a: Vec<&str> = cx.hit_args(hit).iter().map(|&i| cx.text(i)).collect();
        let name = hit
            .callee
            .trim_start_matches("::")
            .trim_start_matches("std::");
        let call = match (name, a.as_slice()) {
            ("strcpy", [d, s]) => format!("std::snprintf({d}, sizeof({d}), \"%s\", {s})"),
            ("strcat", [d, s]) => {
                format!("std::strncat({d}, {s}, sizeof({d}) - std::strlen({d}) - 1)")
            }
            ("sprintf", [d, rest @ ..]) if !rest.is_empty() => {
                format!("std::snprintf({d}, sizeof({d}), {})", rest.join(", "))
            }
            ("vsprintf", [d, rest @ ..]) if !rest.is_empty() => {
                format!("std::vsnprintf({d}, sizeof({d}), {})", rest.join(", "))
            }
            ("gets", [b]) => format!("std::fgets({b}, sizeof({b}), stdin)"),
            ("memcpy", [d, s, n]) => {
                needs_algorithm = true;
                format!(
                    "std::memcpy({d}, {s}, std::min(static_cast<std::size_t>({n}), sizeof({d})))"
                )
            }
            _ => continue,
        };
        edits.push(Edit::replace(&cx.doc.nodes[hit.node].span, call));
    }
    if edits.is_empty() {
        return Err(inapplicable("no rewritable memory sink"));
    }
    edits.extend(ensure_include(cx.src, "cstdio"));
    edits.extend(ensure_include(cx.src, "cstring"));
    if needs_algorithm {
        edits.extend(ensure_include(cx.src, "algorithm"));
    }
    Ok(edits)
}
