//! Path-sensitive abstract interpretation of a Python module.
//!
//! Each root scope (the module body and every function that is never called
//! from within the file) is walked along its control-flow paths. A path is a
//! [`State`]; branches on values that are not statically known fork it,
//! `for` loops over literal iterables are unrolled, and helper functions are
//! inlined at their call sites. Layer constructors, `Sequential` models,
//! functional tensor graphs and optimizer constructors are tracked as
//! abstract values; everything else becomes `Unknown`.
//!
//! Anything whose shape depends on values the walk cannot know (layers added
//! inside a loop with a non-literal bound, tensors produced by unknown calls)
//! taints the model that contains it, and tainted models are reported with a
//! reason instead of being extracted.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::ann::{ArgValue, OptimizerSpec, RawLayer};
use crate::catalog;
use crate::literal::Literal;
use crate::python::ast::{
    walk_stmts, Arg, BinOp, CmpOp, Expr, FunctionDef, Module, ParamKind, Stmt, StmtKind, UnaryOp,
};

pub const MAX_PATHS: usize = 64;
pub const MAX_INLINE_DEPTH: usize = 3;
const MAX_UNROLL: usize = 256;
const MAX_RANGE: i64 = 10_000;

const BUILTINS: &[&str] = &[
    "range", "len", "enumerate", "zip", "list", "tuple", "int", "float", "str", "print", "min", "max",
    "abs", "round", "sum", "isinstance", "open", "super", "dict", "set", "sorted", "reversed", "bool",
    "type", "getattr", "setattr", "hasattr", "format", "map", "filter", "any", "all", "iter", "next",
];

/// A layer constructor call, not yet applied to anything.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCall {
    pub callee: String,
    pub positional: Vec<ArgValue>,
    pub keywords: Vec<(String, ArgValue)>,
}

impl LayerCall {
    fn raw(&self, inputs: Vec<usize>) -> RawLayer {
        RawLayer {
            callee: self.callee.clone(),
            positional: self.positional.clone(),
            keywords: self.keywords.clone(),
            inputs,
        }
    }
}

#[derive(Debug)]
struct ClassInfo {
    methods: HashMap<String, Rc<FunctionDef>>,
}

#[derive(Debug, Clone)]
enum Val {
    Lit(Literal),
    Bool(bool),
    NoneV,
    /// Python list or tuple.
    Seq(Rc<Vec<Val>>),
    /// Dotted path of an imported or builtin name.
    Symbol(Rc<str>),
    Layer(Rc<LayerCall>),
    Tensor(usize),
    Model(usize),
    Optimizer(Rc<OptimizerSpec>),
    Func(Rc<FunctionDef>),
    Class(Rc<ClassInfo>),
    Instance(Rc<ClassInfo>),
    Unknown,
}

impl Val {
    fn truth(&self) -> Option<bool> {
        match self {
            Val::Bool(b) => Some(*b),
            Val::NoneV => Some(false),
            Val::Lit(Literal::Int(i)) => Some(*i != 0),
            Val::Lit(Literal::Float(f)) => Some(*f != 0.0),
            Val::Lit(Literal::Str(s)) => Some(!s.is_empty()),
            Val::Lit(Literal::IntList(l)) => Some(!l.is_empty()),
            Val::Seq(items) => Some(!items.is_empty()),
            Val::Layer(_) | Val::Model(_) | Val::Optimizer(_) | Val::Func(_) | Val::Class(_) => Some(true),
            Val::Symbol(_) | Val::Tensor(_) | Val::Instance(_) | Val::Unknown => None,
        }
    }

    fn int(&self) -> Option<i64> {
        match self {
            Val::Lit(Literal::Int(i)) => Some(*i),
            Val::Bool(b) => Some(*b as i64),
            _ => None,
        }
    }

    fn num(&self) -> Option<f64> {
        match self {
            Val::Lit(Literal::Float(f)) => Some(*f),
            other => other.int().map(|i| i as f64),
        }
    }

    /// Elements of a statically known iterable.
    fn items(&self) -> Option<Vec<Val>> {
        match self {
            Val::Seq(items) => Some(items.as_ref().clone()),
            Val::Lit(Literal::IntList(l)) => Some(l.iter().map(|i| Val::Lit(Literal::Int(*i))).collect()),
            Val::Lit(Literal::Str(s)) => {
                Some(s.chars().map(|c| Val::Lit(Literal::Str(c.to_string()))).collect())
            }
            _ => None,
        }
    }

    fn tensors(&self) -> Option<Vec<usize>> {
        match self {
            Val::Tensor(t) => Some(vec![*t]),
            Val::Seq(items) => items.iter().map(|v| match v {
                Val::Tensor(t) => Some(*t),
                _ => None,
            }).collect(),
            _ => None,
        }
    }

    fn mentions_tensor(&self) -> bool {
        match self {
            Val::Tensor(_) => true,
            Val::Seq(items) => items.iter().any(Val::mentions_tensor),
            _ => false,
        }
    }

    fn describe(&self) -> String {
        match self {
            Val::Lit(l) => l.to_python(),
            Val::Bool(b) => if *b { "True".into() } else { "False".into() },
            Val::NoneV => "None".into(),
            Val::Seq(_) => "a non-literal sequence".into(),
            Val::Symbol(s) => format!("`{s}`"),
            Val::Layer(l) => format!("a `{}` layer object", l.callee),
            Val::Tensor(_) => "a tensor".into(),
            Val::Model(_) => "a model".into(),
            Val::Optimizer(_) => "an optimizer".into(),
            Val::Func(fd) => format!("function `{}`", fd.name),
            Val::Class(_) | Val::Instance(_) => "an object".into(),
            Val::Unknown => "a non-literal value".into(),
        }
    }

    /// Converts a value to a layer argument. `None` for arguments that are
    /// dropped (keyword arguments explicitly set to `None`).
    fn to_arg(&self, keyword: bool) -> Option<ArgValue> {
        match self {
            Val::Lit(l) => Some(ArgValue::Lit(l.clone())),
            Val::NoneV if keyword => None,
            Val::Seq(items) => {
                let ints: Option<Vec<i64>> = items.iter().map(|v| match v {
                    Val::Lit(Literal::Int(i)) => Some(*i),
                    _ => None,
                }).collect();
                Some(match ints {
                    Some(ints) => ArgValue::Lit(Literal::IntList(ints)),
                    None => ArgValue::Opaque("sequence with non-integer elements".into()),
                })
            }
            Val::Symbol(path) => {
                let tail = path.rsplit('.').next().unwrap_or(path);
                let via_module = path.contains("activations.") || path.contains("nn.") || path.contains("backend.");
                if via_module && catalog::is_string_activation(tail) {
                    Some(ArgValue::Lit(Literal::Str(tail.to_string())))
                } else {
                    Some(ArgValue::Opaque(format!("reference to `{path}`")))
                }
            }
            other => Some(ArgValue::Opaque(other.describe())),
        }
    }
}

/// A resolved callee with its state and, for method calls, the receiver
/// and method name.
type Callee = (State, Val, Option<(Val, String)>);

#[derive(Debug, Clone)]
struct Frame {
    vars: HashMap<String, Val>,
}

#[derive(Debug, Clone)]
struct TensorNode {
    /// `None` for `Input(...)` placeholders.
    layer: Option<Rc<LayerCall>>,
    inputs: Vec<usize>,
    shape: Option<ArgValue>,
    depth: usize,
    taint: Option<String>,
}

#[derive(Debug, Clone)]
enum SeqItem {
    Layer(Rc<LayerCall>),
    Shape(ArgValue),
}

#[derive(Debug, Clone)]
enum ModelBody {
    Sequential(Vec<SeqItem>),
    Functional(Result<Vec<RawLayer>, String>),
}

#[derive(Debug, Clone)]
struct ModelRec {
    site: Vec<usize>,
    depth: usize,
    body: ModelBody,
    taint: Option<String>,
    optimizer: Option<Rc<OptimizerSpec>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flow {
    Normal,
    Break,
    Continue,
    Return,
    Raise,
}

#[derive(Debug, Clone)]
struct State {
    frames: Vec<Frame>,
    tensors: Vec<TensorNode>,
    models: Vec<ModelRec>,
    last_optimizer: Option<Rc<OptimizerSpec>>,
    /// Reasons of the enclosing loops that could not be unrolled.
    opaque_loops: Vec<String>,
    /// Inlined helper calls: (function name, call line).
    calls: Vec<(String, usize)>,
    flow: Flow,
    ret: Val,
}

impl State {
    fn new() -> Self {
        let mut globals = HashMap::new();
        globals.insert("__name__".to_string(), Val::Lit(Literal::Str("__main__".into())));
        State {
            frames: vec![Frame { vars: globals }],
            tensors: Vec::new(),
            models: Vec::new(),
            last_optimizer: None,
            opaque_loops: Vec::new(),
            calls: Vec::new(),
            flow: Flow::Normal,
            ret: Val::Unknown,
        }
    }

    fn lookup(&self, name: &str) -> Option<Val> {
        let local = self.frames.last().and_then(|f| f.vars.get(name));
        local.or_else(|| self.frames[0].vars.get(name)).cloned()
    }

    fn bind(&mut self, name: &str, v: Val) {
        self.frames.last_mut().expect("frame").vars.insert(name.to_string(), v);
    }

    fn site(&self, line: usize) -> Vec<usize> {
        self.calls.iter().map(|(_, l)| *l).chain(std::iter::once(line)).collect()
    }

    /// Fresh state for another root scope: module globals survive, models
    /// and tensors built by the module body do not.
    fn for_root(&self) -> State {
        let mut st = State::new();
        for (k, v) in &self.frames[0].vars {
            let v = match v {
                Val::Tensor(_) | Val::Model(_) => Val::Unknown,
                Val::Seq(items) if items.iter().any(|i| matches!(i, Val::Tensor(_) | Val::Model(_))) => Val::Unknown,
                other => other.clone(),
            };
            st.frames[0].vars.insert(k.clone(), v);
        }
        st
    }
}

/// A model as assembled on one path of one root scope.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// Call-stack lines of inlined helpers followed by the creation line.
    pub site: Vec<usize>,
    /// Models created at the same site earlier on the same path.
    pub occurrence: usize,
    pub raw: Result<Vec<RawLayer>, String>,
    pub optimizer: Option<OptimizerSpec>,
}

impl Candidate {
    pub fn line(&self) -> usize {
        *self.site.last().unwrap_or(&0)
    }
}

#[derive(Default)]
pub struct Interp {
    diagnostics: Vec<String>,
    seen: HashSet<String>,
}

struct CallArgs {
    pos: Vec<Val>,
    kw: Vec<(String, Val)>,
    opaque: Option<String>,
}

impl CallArgs {
    fn kw(&self, name: &str) -> Option<&Val> {
        self.kw.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    fn get(&self, index: usize, names: &[&str]) -> Option<&Val> {
        names.iter().find_map(|n| self.kw(n)).or_else(|| self.pos.get(index))
    }

    fn all(&self) -> impl Iterator<Item = &Val> {
        self.pos.iter().chain(self.kw.iter().map(|(_, v)| v))
    }
}

type Outcomes = Vec<(State, Val)>;

impl Interp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_diagnostics(self) -> Vec<String> {
        self.diagnostics
    }

    fn diag(&mut self, line: usize, msg: impl AsRef<str>) {
        let text = format!("line {line}: {}", msg.as_ref());
        if self.seen.insert(text.clone()) {
            self.diagnostics.push(text);
        }
    }

    /// Walks every root scope of `module` and returns the models found on
    /// each path.
    pub fn run(&mut self, module: &Module) -> Vec<Candidate> {
        let mut called: HashSet<String> = HashSet::new();
        walk_stmts(&module.body, &mut |stmt| {
            for e in stmt.exprs() {
                e.walk(&mut |e| {
                    if let Expr::Call { func, .. } = e {
                        if let Some(name) = func.tail_name() {
                            called.insert(name.to_string());
                        }
                    }
                });
            }
        });

        let mut out = Vec::new();
        let finals = self.exec_block(&module.body, vec![State::new()]);
        let base = finals.iter().find(|s| s.flow != Flow::Raise).unwrap_or(&finals[0]).for_root();
        self.collect(&finals, &mut out);

        let mut roots: Vec<(Rc<FunctionDef>, Option<Rc<ClassInfo>>)> = Vec::new();
        for stmt in &module.body {
            match &stmt.kind {
                StmtKind::FunctionDef(fd) if !called.contains(&fd.name) => roots.push((fd.clone(), None)),
                StmtKind::ClassDef { body, .. } => {
                    let info = class_info(body);
                    for s in body {
                        if let StmtKind::FunctionDef(fd) = &s.kind {
                            if !called.contains(&fd.name) {
                                roots.push((fd.clone(), Some(info.clone())));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        for (fd, class) in roots {
            let mut st = base.clone();
            let mut frame = Frame { vars: HashMap::new() };
            for (j, p) in fd.params.iter().enumerate() {
                let v = match (&class, j, &p.default) {
                    (Some(c), 0, _) if p.kind == ParamKind::Normal => Val::Instance(c.clone()),
                    (_, _, Some(d)) => literal_default(d),
                    _ => Val::Unknown,
                };
                frame.vars.insert(p.name.clone(), v);
            }
            st.frames.push(frame);
            let finals = self.exec_block(&fd.body, vec![st]);
            self.collect(&finals, &mut out);
        }
        out
    }

    fn collect(&mut self, finals: &[State], out: &mut Vec<Candidate>) {
        for st in finals {
            if st.flow == Flow::Raise {
                continue;
            }
            let mut occurrences: HashMap<Vec<usize>, usize> = HashMap::new();
            for m in &st.models {
                let raw = match (&m.taint, &m.body) {
                    (Some(reason), _) => Err(reason.clone()),
                    (None, ModelBody::Sequential(items)) => {
                        if !items.iter().any(|i| matches!(i, SeqItem::Layer(_))) {
                            continue;
                        }
                        Ok(sequential_raw(items))
                    }
                    (None, ModelBody::Functional(raw)) => raw.clone(),
                };
                let occ = occurrences.entry(m.site.clone()).or_insert(0);
                out.push(Candidate {
                    site: m.site.clone(),
                    occurrence: *occ,
                    raw,
                    optimizer: m.optimizer.as_deref().cloned(),
                });
                *occ += 1;
            }
        }
    }

    fn cap(&mut self, mut states: Vec<State>, line: usize) -> Vec<State> {
        if states.len() > MAX_PATHS {
            states.truncate(MAX_PATHS);
            self.diag(line, format!("more than {MAX_PATHS} control-flow paths; later paths are not explored"));
        }
        states
    }

    fn exec_block(&mut self, stmts: &[Stmt], mut states: Vec<State>) -> Vec<State> {
        for stmt in stmts {
            if states.iter().all(|s| s.flow != Flow::Normal) {
                break;
            }
            let mut next = Vec::with_capacity(states.len());
            for st in states {
                if st.flow == Flow::Normal {
                    next.extend(self.exec_stmt(stmt, st));
                } else {
                    next.push(st);
                }
            }
            states = self.cap(next, stmt.line);
        }
        states
    }

    fn exec_stmt(&mut self, stmt: &Stmt, st: State) -> Vec<State> {
        let line = stmt.line;
        match &stmt.kind {
            StmtKind::Expr(e) => self.eval(st, e).into_iter().map(|(s, _)| s).collect(),
            StmtKind::Assign { targets, value } => self
                .eval(st, value)
                .into_iter()
                .map(|(mut s, v)| {
                    if s.flow == Flow::Normal {
                        for t in targets {
                            assign(&mut s, t, v.clone());
                        }
                    }
                    s
                })
                .collect(),
            StmtKind::AugAssign { target, op, value } => {
                let mut out = Vec::new();
                for (s, vals) in self.eval_all(st, &[target, value]) {
                    let mut s = s;
                    if s.flow == Flow::Normal {
                        let v = self.binop(&mut s, &vals[0], *op, &vals[1], line);
                        assign(&mut s, target, v);
                    }
                    out.push(s);
                }
                out
            }
            StmtKind::AnnAssign { target, value } => match value {
                None => vec![st],
                Some(value) => self
                    .eval(st, value)
                    .into_iter()
                    .map(|(mut s, v)| {
                        if s.flow == Flow::Normal {
                            assign(&mut s, target, v);
                        }
                        s
                    })
                    .collect(),
            },
            StmtKind::Import(aliases) => {
                let mut st = st;
                for a in aliases {
                    match &a.asname {
                        Some(as_) => st.bind(as_, Val::Symbol(a.name.as_str().into())),
                        None => {
                            let head = a.name.split('.').next().unwrap_or(&a.name);
                            st.bind(head, Val::Symbol(head.into()));
                        }
                    }
                }
                vec![st]
            }
            StmtKind::ImportFrom { module, names } => {
                let mut st = st;
                for a in names {
                    if a.name == "*" {
                        st.bind("*", Val::Symbol(module.as_str().into()));
                    } else {
                        let path: Rc<str> = format!("{module}.{}", a.name).into();
                        st.bind(a.asname.as_ref().unwrap_or(&a.name), Val::Symbol(path));
                    }
                }
                vec![st]
            }
            StmtKind::FunctionDef(fd) => {
                let mut st = st;
                st.bind(&fd.name, Val::Func(fd.clone()));
                vec![st]
            }
            StmtKind::ClassDef { name, body, .. } => {
                let mut st = st;
                st.bind(name, Val::Class(class_info(body)));
                vec![st]
            }
            StmtKind::If { test, body, orelse } => {
                let mut out = Vec::new();
                for (s, v) in self.eval(st, test) {
                    if s.flow != Flow::Normal {
                        out.push(s);
                        continue;
                    }
                    match v.truth() {
                        Some(true) => out.extend(self.exec_block(body, vec![s])),
                        Some(false) => out.extend(self.exec_block(orelse, vec![s])),
                        None => {
                            out.extend(self.exec_block(body, vec![s.clone()]));
                            out.extend(self.exec_block(orelse, vec![s]));
                        }
                    }
                }
                out
            }
            StmtKind::For { target, iter, body, orelse } => {
                let mut out = Vec::new();
                for (s, v) in self.eval(st, iter) {
                    if s.flow != Flow::Normal {
                        out.push(s);
                        continue;
                    }
                    match v.items().filter(|items| items.len() <= MAX_UNROLL) {
                        Some(items) => out.extend(self.unroll(target, items, body, orelse, s, line)),
                        None => {
                            let reason = format!("loop at line {line} has no literal iteration count");
                            let mut s = s;
                            assign(&mut s, target, Val::Unknown);
                            out.extend(self.opaque_loop(body, orelse, s, reason));
                        }
                    }
                }
                out
            }
            StmtKind::While { test, body, orelse } => {
                let mut out = Vec::new();
                for (s, v) in self.eval(st, test) {
                    if s.flow != Flow::Normal || v.truth() == Some(false) {
                        out.extend(if s.flow == Flow::Normal { self.exec_block(orelse, vec![s]) } else { vec![s] });
                        continue;
                    }
                    let reason = format!("while loop at line {line}");
                    out.extend(self.opaque_loop(body, orelse, s, reason));
                }
                out
            }
            StmtKind::With { items, body } => {
                let exprs: Vec<&Expr> = items.iter().map(|(e, _)| e).collect();
                let mut out = Vec::new();
                for (mut s, _) in self.eval_all(st, &exprs) {
                    if s.flow != Flow::Normal {
                        out.push(s);
                        continue;
                    }
                    for (_, target) in items {
                        if let Some(t) = target {
                            assign(&mut s, t, Val::Unknown);
                        }
                    }
                    out.extend(self.exec_block(body, vec![s]));
                }
                out
            }
            StmtKind::Try { body, orelse, finalbody, .. } => {
                let after_body = self.exec_block(body, vec![st]);
                let mut out = Vec::new();
                for mut s in after_body {
                    // The exception is caught by a handler whose body is not
                    // analysed.
                    let states = if s.flow == Flow::Raise {
                        s.flow = Flow::Normal;
                        vec![s]
                    } else if s.flow == Flow::Normal {
                        self.exec_block(orelse, vec![s])
                    } else {
                        vec![s]
                    };
                    for s in states {
                        let flow = s.flow;
                        let ret = s.ret.clone();
                        let mut s = s;
                        s.flow = Flow::Normal;
                        for mut f in self.exec_block(finalbody, vec![s]) {
                            if f.flow == Flow::Normal {
                                f.flow = flow;
                                f.ret = ret.clone();
                            }
                            out.push(f);
                        }
                    }
                }
                out
            }
            StmtKind::Return(value) => {
                let outcomes = match value {
                    Some(e) => self.eval(st, e),
                    None => vec![(st, Val::NoneV)],
                };
                outcomes
                    .into_iter()
                    .map(|(mut s, v)| {
                        if s.flow == Flow::Normal {
                            s.flow = Flow::Return;
                            s.ret = v;
                        }
                        s
                    })
                    .collect()
            }
            StmtKind::Raise => {
                let mut st = st;
                st.flow = Flow::Raise;
                vec![st]
            }
            StmtKind::Break => {
                let mut st = st;
                st.flow = Flow::Break;
                vec![st]
            }
            StmtKind::Continue => {
                let mut st = st;
                st.flow = Flow::Continue;
                vec![st]
            }
            StmtKind::Del(targets) => {
                let mut st = st;
                for t in targets {
                    if let Expr::Name(n) = t {
                        st.bind(n, Val::Unknown);
                    }
                }
                vec![st]
            }
            StmtKind::Pass | StmtKind::Global(_) | StmtKind::Assert => vec![st],
        }
    }

    fn unroll(
        &mut self,
        target: &Expr,
        items: Vec<Val>,
        body: &[Stmt],
        orelse: &[Stmt],
        st: State,
        line: usize,
    ) -> Vec<State> {
        let mut running = vec![st];
        let mut finished = Vec::new();
        for item in items {
            if running.is_empty() {
                break;
            }
            let mut next = Vec::new();
            for mut s in running {
                assign(&mut s, target, item.clone());
                for mut r in self.exec_block(body, vec![s]) {
                    match r.flow {
                        Flow::Normal => next.push(r),
                        Flow::Continue => {
                            r.flow = Flow::Normal;
                            next.push(r);
                        }
                        Flow::Break => {
                            r.flow = Flow::Normal;
                            finished.push(r);
                        }
                        Flow::Return | Flow::Raise => finished.push(r),
                    }
                }
            }
            running = self.cap(next, line);
        }
        let mut out = self.exec_block(orelse, running);
        out.extend(finished);
        out
    }

    fn opaque_loop(&mut self, body: &[Stmt], orelse: &[Stmt], mut st: State, reason: String) -> Vec<State> {
        st.opaque_loops.push(reason);
        let mut out = Vec::new();
        for mut r in self.exec_block(body, vec![st]) {
            r.opaque_loops.pop();
            match r.flow {
                Flow::Break | Flow::Continue => {
                    r.flow = Flow::Normal;
                    out.push(r);
                }
                _ => out.push(r),
            }
        }
        let (normal, other): (Vec<State>, Vec<State>) = out.into_iter().partition(|s| s.flow == Flow::Normal);
        let mut out = self.exec_block(orelse, normal);
        out.extend(other);
        out
    }

    fn eval_all(&mut self, st: State, exprs: &[&Expr]) -> Vec<(State, Vec<Val>)> {
        let mut acc = vec![(st, Vec::with_capacity(exprs.len()))];
        for e in exprs {
            let mut next = Vec::new();
            for (s, vals) in acc {
                if s.flow != Flow::Normal {
                    next.push((s, vals));
                    continue;
                }
                for (s2, v) in self.eval(s, e) {
                    let mut vals = vals.clone();
                    vals.push(v);
                    next.push((s2, vals));
                }
            }
            acc = next;
        }
        for (_, vals) in acc.iter_mut() {
            vals.resize(exprs.len(), Val::Unknown);
        }
        acc
    }

    fn eval(&mut self, st: State, e: &Expr) -> Outcomes {
        match e {
            Expr::Name(n) => {
                let v = lookup_name(&st, n);
                vec![(st, v)]
            }
            Expr::Int(i) => vec![(st, Val::Lit(Literal::Int(*i)))],
            Expr::Float(f) => vec![(st, Val::Lit(Literal::Float(*f)))],
            Expr::Str(s) => vec![(st, Val::Lit(Literal::Str(s.clone())))],
            Expr::Bool(b) => vec![(st, Val::Bool(*b))],
            Expr::None => vec![(st, Val::NoneV)],
            Expr::OpaqueNumber | Expr::OpaqueStr | Expr::Ellipsis | Expr::Lambda | Expr::Comprehension | Expr::Yield => {
                vec![(st, Val::Unknown)]
            }
            Expr::Tuple(items) | Expr::List(items) | Expr::Set(items) => {
                let refs: Vec<&Expr> = items.iter().collect();
                self.eval_all(st, &refs)
                    .into_iter()
                    .map(|(s, vals)| {
                        let mut out = Vec::new();
                        for (item, v) in items.iter().zip(vals) {
                            if matches!(item, Expr::Starred(_)) {
                                match v.items() {
                                    Some(inner) => out.extend(inner),
                                    None => return (s, Val::Unknown),
                                }
                            } else {
                                out.push(v);
                            }
                        }
                        (s, Val::Seq(Rc::new(out)))
                    })
                    .collect()
            }
            Expr::Dict(items) => {
                let refs: Vec<&Expr> = items.iter().flat_map(|(k, v)| k.iter().chain(std::iter::once(v))).collect();
                self.eval_all(st, &refs).into_iter().map(|(s, _)| (s, Val::Unknown)).collect()
            }
            Expr::Attribute(base, attr) => {
                if let Some(v) = lookup_dotted(&st, e) {
                    return vec![(st, v)];
                }
                self.eval(st, base)
                    .into_iter()
                    .map(|(s, b)| {
                        let v = match b {
                            Val::Symbol(p) => Val::Symbol(format!("{p}.{attr}").into()),
                            _ => Val::Unknown,
                        };
                        (s, v)
                    })
                    .collect()
            }
            Expr::Call { func, args, line } => self.eval_call(st, func, args, *line),
            Expr::Subscript(base, index) => {
                let line = 0;
                self.eval_all(st, &[base, index])
                    .into_iter()
                    .map(|(mut s, vals)| {
                        let v = match (&vals[0], &vals[1]) {
                            (b, _) if b.mentions_tensor() => self.derived_tensor(&mut s, &vals, "tensor indexing", line),
                            (b, Val::Lit(Literal::Int(i))) => match b.items() {
                                Some(items) => {
                                    let n = items.len() as i64;
                                    let idx = if *i < 0 { n + i } else { *i };
                                    if (0..n).contains(&idx) { items[idx as usize].clone() } else { Val::Unknown }
                                }
                                None => Val::Unknown,
                            },
                            _ => Val::Unknown,
                        };
                        (s, v)
                    })
                    .collect()
            }
            Expr::Slice(..) => vec![(st, Val::Unknown)],
            Expr::BinOp(a, op, b) => self
                .eval_all(st, &[a, b])
                .into_iter()
                .map(|(mut s, vals)| {
                    let v = self.binop(&mut s, &vals[0], *op, &vals[1], 0);
                    (s, v)
                })
                .collect(),
            Expr::UnaryOp(op, inner) => self
                .eval(st, inner)
                .into_iter()
                .map(|(s, v)| {
                    let r = match (op, &v) {
                        (UnaryOp::Not, v) => v.truth().map_or(Val::Unknown, |b| Val::Bool(!b)),
                        (UnaryOp::Neg, Val::Lit(Literal::Int(i))) => {
                            i.checked_neg().map_or(Val::Unknown, |i| Val::Lit(Literal::Int(i)))
                        }
                        (UnaryOp::Neg, Val::Lit(Literal::Float(f))) => Val::Lit(Literal::Float(-f)),
                        (UnaryOp::Pos, Val::Lit(l)) if l.is_numeric() => v.clone(),
                        (UnaryOp::Invert, Val::Lit(Literal::Int(i))) => Val::Lit(Literal::Int(!i)),
                        _ => Val::Unknown,
                    };
                    (s, r)
                })
                .collect(),
            Expr::BoolOp(is_and, items) => {
                let refs: Vec<&Expr> = items.iter().collect();
                self.eval_all(st, &refs)
                    .into_iter()
                    .map(|(s, vals)| {
                        let mut result = None;
                        for v in &vals {
                            match v.truth() {
                                None => return (s, Val::Unknown),
                                Some(t) if t != *is_and => {
                                    result = Some(v.clone());
                                    break;
                                }
                                Some(_) => {}
                            }
                        }
                        let r = result.unwrap_or_else(|| vals.last().cloned().unwrap_or(Val::Unknown));
                        (s, r)
                    })
                    .collect()
            }
            Expr::Compare(first, rest) => {
                let refs: Vec<&Expr> = std::iter::once(first.as_ref()).chain(rest.iter().map(|(_, e)| e)).collect();
                self.eval_all(st, &refs)
                    .into_iter()
                    .map(|(s, vals)| {
                        let mut all = Some(true);
                        for (i, (op, _)) in rest.iter().enumerate() {
                            match compare(&vals[i], *op, &vals[i + 1]) {
                                Some(true) => {}
                                Some(false) => {
                                    all = Some(false);
                                    break;
                                }
                                None => all = None,
                            }
                        }
                        (s, all.map_or(Val::Unknown, Val::Bool))
                    })
                    .collect()
            }
            Expr::IfExp { test, body, orelse } => {
                let mut out = Vec::new();
                for (s, v) in self.eval(st, test) {
                    if s.flow != Flow::Normal {
                        out.push((s, Val::Unknown));
                        continue;
                    }
                    match v.truth() {
                        Some(true) => out.extend(self.eval(s, body)),
                        Some(false) => out.extend(self.eval(s, orelse)),
                        None => {
                            out.extend(self.eval(s.clone(), body));
                            out.extend(self.eval(s, orelse));
                        }
                    }
                }
                out
            }
            Expr::Starred(inner) => self.eval(st, inner),
            Expr::Await(inner) => self.eval(st, inner).into_iter().map(|(s, _)| (s, Val::Unknown)).collect(),
            Expr::NamedExpr(name, inner) => self
                .eval(st, inner)
                .into_iter()
                .map(|(mut s, v)| {
                    s.bind(name, v.clone());
                    (s, v)
                })
                .collect(),
        }
    }

    fn binop(&mut self, st: &mut State, a: &Val, op: BinOp, b: &Val, line: usize) -> Val {
        if a.mentions_tensor() || b.mentions_tensor() {
            return self.derived_tensor(st, &[a.clone(), b.clone()], "arithmetic on tensors", line);
        }
        match (a, b) {
            (Val::Lit(Literal::Int(x)), Val::Lit(Literal::Int(y))) => {
                let (x, y) = (*x, *y);
                let r = match op {
                    BinOp::Add => x.checked_add(y),
                    BinOp::Sub => x.checked_sub(y),
                    BinOp::Mul => x.checked_mul(y),
                    BinOp::FloorDiv if y != 0 => Some(x.div_euclid(y) - if (x % y != 0) && ((x < 0) != (y < 0)) && x.rem_euclid(y) == 0 { 1 } else { 0 }),
                    BinOp::Mod if y != 0 => Some(((x % y) + y) % y),
                    BinOp::Pow if (0..64).contains(&y) => x.checked_pow(y as u32),
                    BinOp::LShift if (0..63).contains(&y) => x.checked_shl(y as u32),
                    BinOp::RShift if (0..63).contains(&y) => Some(x >> y),
                    BinOp::BitAnd => Some(x & y),
                    BinOp::BitOr => Some(x | y),
                    BinOp::BitXor => Some(x ^ y),
                    BinOp::Div if y != 0 => return Val::Lit(Literal::Float(x as f64 / y as f64)),
                    _ => None,
                };
                r.map_or(Val::Unknown, |v| Val::Lit(Literal::Int(v)))
            }
            (Val::Lit(Literal::Str(x)), Val::Lit(Literal::Str(y))) if op == BinOp::Add => {
                Val::Lit(Literal::Str(format!("{x}{y}")))
            }
            (x, y) if x.num().is_some() && y.num().is_some() && (matches!(x, Val::Lit(_)) && matches!(y, Val::Lit(_))) => {
                let (x, y) = (x.num().unwrap(), y.num().unwrap());
                let r = match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div if y != 0.0 => x / y,
                    BinOp::Pow => x.powf(y),
                    _ => return Val::Unknown,
                };
                if r.is_finite() { Val::Lit(Literal::Float(r)) } else { Val::Unknown }
            }
            (x, y) if op == BinOp::Add && matches!(x, Val::Seq(_) | Val::Lit(Literal::IntList(_))) => {
                match (x.items(), y.items()) {
                    (Some(mut xs), Some(ys)) if !matches!(y, Val::Lit(Literal::Str(_))) => {
                        xs.extend(ys);
                        Val::Seq(Rc::new(xs))
                    }
                    _ => Val::Unknown,
                }
            }
            (x, Val::Lit(Literal::Int(n))) if op == BinOp::Mul && matches!(x, Val::Seq(_)) => {
                let items = x.items().unwrap_or_default();
                if *n < 0 || items.len() * (*n as usize) > MAX_UNROLL {
                    return Val::Unknown;
                }
                let mut out = Vec::new();
                for _ in 0..*n {
                    out.extend(items.iter().cloned());
                }
                Val::Seq(Rc::new(out))
            }
            _ => Val::Unknown,
        }
    }

    /// A tensor produced by an operation the walk does not model.
    fn derived_tensor(&mut self, st: &mut State, from: &[Val], reason: &str, line: usize) -> Val {
        let mut inputs = Vec::new();
        for v in from {
            collect_tensors(v, &mut inputs);
        }
        let id = st.tensors.len();
        st.tensors.push(TensorNode {
            layer: None,
            inputs,
            shape: None,
            depth: st.opaque_loops.len(),
            taint: Some(if line > 0 { format!("{reason} at line {line}") } else { reason.to_string() }),
        });
        Val::Tensor(id)
    }

    fn eval_args(&mut self, st: State, args: &[Arg]) -> Vec<(State, CallArgs)> {
        let exprs: Vec<&Expr> = args
            .iter()
            .map(|a| match a {
                Arg::Pos(e) | Arg::Kw(_, e) | Arg::Star(e) | Arg::DoubleStar(e) => e,
            })
            .collect();
        self.eval_all(st, &exprs)
            .into_iter()
            .map(|(s, vals)| {
                let mut ca = CallArgs { pos: Vec::new(), kw: Vec::new(), opaque: None };
                for (a, v) in args.iter().zip(vals) {
                    match a {
                        Arg::Pos(_) => ca.pos.push(v),
                        Arg::Kw(k, _) => ca.kw.push((k.clone(), v)),
                        Arg::Star(_) => match v.items() {
                            Some(items) => ca.pos.extend(items),
                            None => ca.opaque = Some("starred argument".into()),
                        },
                        Arg::DoubleStar(_) => ca.opaque = Some("keyword-argument unpacking".into()),
                    }
                }
                (s, ca)
            })
            .collect()
    }

    fn eval_call(&mut self, st: State, func: &Expr, args: &[Arg], line: usize) -> Outcomes {
        // Resolve the callee (and, for method calls, the receiver).
        let mut callees: Vec<Callee> = Vec::new();
        match func {
            Expr::Attribute(base, attr) if lookup_dotted(&st, func).is_none() => {
                for (s, b) in self.eval(st, base) {
                    callees.push((s, Val::Unknown, Some((b, attr.clone()))));
                }
            }
            _ => {
                for (s, v) in self.eval(st, func) {
                    callees.push((s, v, None));
                }
            }
        }

        let mut out = Vec::new();
        for (s, callee, receiver) in callees {
            if s.flow != Flow::Normal {
                out.push((s, Val::Unknown));
                continue;
            }
            for (s, ca) in self.eval_args(s, args) {
                if s.flow != Flow::Normal {
                    out.push((s, Val::Unknown));
                    continue;
                }
                match &receiver {
                    Some((recv, attr)) => out.extend(self.call_method(s, func, recv, attr, ca, line)),
                    None => out.extend(self.call_value(s, &callee, ca, line)),
                }
            }
        }
        out
    }

    fn call_method(&mut self, mut st: State, func: &Expr, recv: &Val, attr: &str, ca: CallArgs, line: usize) -> Outcomes {
        match recv {
            Val::Symbol(p) => {
                let path: Rc<str> = format!("{p}.{attr}").into();
                self.call_value(st, &Val::Symbol(path), ca, line)
            }
            Val::Model(id) => {
                let id = *id;
                match attr {
                    "add" => {
                        let v = ca.get(0, &["layer"]).cloned().unwrap_or(Val::Unknown);
                        self.seq_add(&mut st, id, v, line);
                        vec![(st, Val::NoneV)]
                    }
                    "pop" => {
                        if let ModelBody::Sequential(items) = &mut st.models[id].body {
                            if let Some(pos) = items.iter().rposition(|i| matches!(i, SeqItem::Layer(_))) {
                                items.remove(pos);
                            }
                        }
                        vec![(st, Val::NoneV)]
                    }
                    "compile" => {
                        let opt = match ca.get(0, &["optimizer"]) {
                            None => None,
                            Some(Val::Optimizer(o)) => Some(o.clone()),
                            Some(Val::Lit(Literal::Str(name))) => {
                                let func = catalog::optimizer_from_string(name).map_or(name.clone(), str::to_string);
                                Some(Rc::new(OptimizerSpec::new(func)))
                            }
                            Some(_) => st.last_optimizer.clone(),
                        };
                        st.models[id].optimizer = opt;
                        vec![(st, Val::NoneV)]
                    }
                    _ => {
                        if ca.all().any(Val::mentions_tensor) && attr == "call" {
                            let v = self.derived_tensor(&mut st, &ca.pos, "model used as a layer", line);
                            return vec![(st, v)];
                        }
                        vec![(st, Val::Unknown)]
                    }
                }
            }
            Val::Instance(cls) => match cls.methods.get(attr) {
                Some(fd) => {
                    let fd = fd.clone();
                    let cls = cls.clone();
                    let mut ca = ca;
                    ca.pos.insert(0, Val::Instance(cls.clone()));
                    self.inline(st, &fd, ca, line)
                }
                None => self.unknown_call(st, ca, attr, line),
            },
            Val::Seq(items) if matches!(attr, "append" | "extend" | "insert") => {
                let mut items = items.as_ref().clone();
                match attr {
                    "append" => items.push(ca.pos.first().cloned().unwrap_or(Val::Unknown)),
                    "extend" => match ca.pos.first().and_then(Val::items) {
                        Some(more) => items.extend(more),
                        None => {
                            rebind(&mut st, func, Val::Unknown);
                            return vec![(st, Val::NoneV)];
                        }
                    },
                    _ => {
                        rebind(&mut st, func, Val::Unknown);
                        return vec![(st, Val::NoneV)];
                    }
                }
                rebind(&mut st, func, Val::Seq(Rc::new(items)));
                vec![(st, Val::NoneV)]
            }
            Val::Tensor(_) => {
                let mut from = vec![recv.clone()];
                from.extend(ca.pos.iter().cloned());
                let v = self.derived_tensor(&mut st, &from, &format!("tensor method `{attr}`"), line);
                vec![(st, v)]
            }
            _ => self.unknown_call(st, ca, attr, line),
        }
    }

    fn call_value(&mut self, mut st: State, callee: &Val, ca: CallArgs, line: usize) -> Outcomes {
        match callee {
            Val::Func(fd) => {
                let fd = fd.clone();
                self.inline(st, &fd, ca, line)
            }
            Val::Class(info) => vec![(st, Val::Instance(info.clone()))],
            Val::Layer(lc) => {
                let lc = lc.clone();
                let v = self.apply_layer(&mut st, lc, ca.pos.first(), line);
                vec![(st, v)]
            }
            Val::Symbol(path) => {
                let path = path.clone();
                self.call_symbol(st, &path, ca, line)
            }
            Val::Model(_) if ca.all().any(Val::mentions_tensor) => {
                let v = self.derived_tensor(&mut st, &ca.pos, "model used as a layer", line);
                vec![(st, v)]
            }
            _ => self.unknown_call(st, ca, "<value>", line),
        }
    }

    fn unknown_call(&mut self, mut st: State, ca: CallArgs, name: &str, line: usize) -> Outcomes {
        if ca.all().any(Val::mentions_tensor) {
            let vals: Vec<Val> = ca.all().cloned().collect();
            let v = self.derived_tensor(&mut st, &vals, &format!("unknown call `{name}` on a tensor"), line);
            return vec![(st, v)];
        }
        vec![(st, Val::Unknown)]
    }

    fn inline(&mut self, mut st: State, fd: &Rc<FunctionDef>, ca: CallArgs, line: usize) -> Outcomes {
        if st.calls.len() >= MAX_INLINE_DEPTH || st.calls.iter().any(|(n, _)| *n == fd.name) {
            self.diag(line, format!("call to `{}` is not inlined (nesting limit or recursion)", fd.name));
            for v in ca.all() {
                if let Val::Model(id) = v {
                    taint_model(&mut st, *id, format!("model passed to `{}`, which was not analysed", fd.name));
                }
            }
            return self.unknown_call(st, ca, &fd.name, line);
        }
        let mut frame = Frame { vars: HashMap::new() };
        let mut pos = ca.pos.into_iter();
        let mut kw: Vec<(String, Val)> = ca.kw;
        for p in &fd.params {
            let from_kw = kw.iter().position(|(k, _)| *k == p.name).map(|i| kw.remove(i).1);
            let v = match p.kind {
                ParamKind::Normal => from_kw.or_else(|| pos.next()),
                ParamKind::KwOnly => from_kw,
                ParamKind::VarArgs => Some(Val::Seq(Rc::new(pos.by_ref().collect()))),
                ParamKind::KwArgs => Some(Val::Unknown),
            };
            let v = match (v, &p.default) {
                (Some(v), _) => v,
                (None, Some(d)) => literal_default(d),
                (None, None) => Val::Unknown,
            };
            frame.vars.insert(p.name.clone(), v);
        }
        st.frames.push(frame);
        st.calls.push((fd.name.clone(), line));
        let mut out = Vec::new();
        for mut s in self.exec_block(&fd.body, vec![st]) {
            s.frames.pop();
            s.calls.pop();
            let v = match s.flow {
                Flow::Return => std::mem::replace(&mut s.ret, Val::Unknown),
                Flow::Raise => Val::Unknown,
                _ => Val::NoneV,
            };
            if s.flow != Flow::Raise {
                s.flow = Flow::Normal;
            }
            out.push((s, v));
        }
        out
    }

    fn call_symbol(&mut self, mut st: State, path: &str, ca: CallArgs, line: usize) -> Outcomes {
        if !path.contains('.') && BUILTINS.contains(&path) {
            let v = builtin(path, &ca);
            return vec![(st, v)];
        }
        let tail = path.rsplit('.').next().unwrap_or(path);

        if catalog::is_input_callee(tail) {
            let shape = ca
                .get(0, &["shape", "input_shape"])
                .and_then(|v| v.to_arg(true))
                .or_else(|| ca.kw("batch_shape").map(|_| ArgValue::Opaque("batch_shape".into())));
            let id = st.tensors.len();
            st.tensors.push(TensorNode { layer: None, inputs: Vec::new(), shape, depth: st.opaque_loops.len(), taint: None });
            return vec![(st, Val::Tensor(id))];
        }
        if catalog::is_sequential_callee(tail) {
            let id = st.models.len();
            st.models.push(ModelRec {
                site: st.site(line),
                depth: st.opaque_loops.len(),
                body: ModelBody::Sequential(Vec::new()),
                taint: None,
                optimizer: None,
            });
            if let Some(layers) = ca.get(0, &["layers"]) {
                match layers.items() {
                    Some(items) => {
                        for v in items {
                            self.seq_add(&mut st, id, v, line);
                        }
                    }
                    None if matches!(layers, Val::NoneV) => {}
                    None => taint_model(&mut st, id, format!("layer list at line {line} is not literal")),
                }
            }
            return vec![(st, Val::Model(id))];
        }
        if catalog::is_model_callee(tail) {
            let inputs = ca.get(0, &["inputs", "input"]).cloned();
            let outputs = ca.get(1, &["outputs", "output"]).cloned();
            let body = functional_raw(&st, inputs.as_ref(), outputs.as_ref(), line);
            let id = st.models.len();
            st.models.push(ModelRec {
                site: st.site(line),
                depth: st.opaque_loops.len(),
                body: ModelBody::Functional(body),
                taint: None,
                optimizer: None,
            });
            return vec![(st, Val::Model(id))];
        }
        if let Some(entry) = catalog::lookup_layer(tail) {
            let mut lc = LayerCall { callee: tail.to_string(), positional: Vec::new(), keywords: Vec::new() };
            let skip = usize::from(entry.functional_merge);
            for v in ca.pos.iter().skip(skip) {
                lc.positional.push(v.to_arg(false).expect("positional"));
            }
            for (k, v) in &ca.kw {
                if entry.functional_merge && k == "inputs" {
                    continue;
                }
                if let Some(a) = v.to_arg(true) {
                    lc.keywords.push((k.clone(), a));
                }
            }
            if let Some(reason) = &ca.opaque {
                lc.positional.push(ArgValue::Opaque(reason.clone()));
            }
            let lc = Rc::new(lc);
            if entry.functional_merge {
                let inputs = ca.get(0, &["inputs"]).cloned();
                let v = self.apply_layer(&mut st, lc, inputs.as_ref(), line);
                return vec![(st, v)];
            }
            return vec![(st, Val::Layer(lc))];
        }
        if let Some(name) = catalog::lookup_optimizer(tail) {
            let mut spec = OptimizerSpec::new(name);
            for (i, v) in ca.pos.iter().enumerate() {
                match v {
                    Val::Lit(l) if l.is_numeric() => spec.args.insert(format!("arg{}", i + 1), l.clone()),
                    other => {
                        self.diag(line, format!("optimizer argument {} ({}) is not numeric and is dropped", i + 1, other.describe()));
                        None
                    }
                };
            }
            for (k, v) in &ca.kw {
                match v {
                    Val::Lit(l) if l.is_numeric() && l.as_f64().is_some_and(f64::is_finite) => {
                        spec.args.insert(k.clone(), l.clone());
                    }
                    other => self.diag(line, format!("optimizer argument `{k}` ({}) is not numeric and is dropped", other.describe())),
                }
            }
            let spec = Rc::new(spec);
            st.last_optimizer = Some(spec.clone());
            return vec![(st, Val::Optimizer(spec))];
        }
        if catalog::is_string_activation(tail) && ca.pos.first().is_some_and(Val::mentions_tensor) {
            let lc = Rc::new(LayerCall {
                callee: catalog::ACTIVATION_CALLEE.to_string(),
                positional: vec![ArgValue::Lit(Literal::Str(tail.to_string()))],
                keywords: Vec::new(),
            });
            let v = self.apply_layer(&mut st, lc, ca.pos.first(), line);
            return vec![(st, v)];
        }
        self.unknown_call(st, ca, path, line)
    }

    fn apply_layer(&mut self, st: &mut State, lc: Rc<LayerCall>, input: Option<&Val>, line: usize) -> Val {
        let depth = st.opaque_loops.len();
        let mut taint = None;
        let inputs = match input.and_then(Val::tensors) {
            Some(t) => t,
            None => {
                taint = Some(format!(
                    "`{}` at line {line} is applied to {}",
                    lc.callee,
                    input.map_or("nothing".to_string(), Val::describe)
                ));
                Vec::new()
            }
        };
        for &i in &inputs {
            if let Some(t) = &st.tensors[i].taint {
                taint.get_or_insert_with(|| t.clone());
            }
            if st.tensors[i].depth < depth {
                let reason = st.opaque_loops.last().cloned().unwrap_or_default();
                self.diag(line, format!("layer built inside a loop that cannot be unrolled ({reason})"));
                taint.get_or_insert(reason);
            }
        }
        let id = st.tensors.len();
        st.tensors.push(TensorNode { layer: Some(lc), inputs, shape: None, depth, taint });
        Val::Tensor(id)
    }

    fn seq_add(&mut self, st: &mut State, id: usize, v: Val, line: usize) {
        if st.opaque_loops.len() > st.models[id].depth {
            let reason = st.opaque_loops.last().cloned().unwrap_or_default();
            self.diag(line, format!("layer added inside a loop that cannot be unrolled ({reason})"));
            taint_model(st, id, reason);
        }
        let item = match &v {
            Val::Layer(lc) => Ok(SeqItem::Layer(lc.clone())),
            Val::Tensor(t) if st.tensors[*t].layer.is_none() && st.tensors[*t].taint.is_none() => {
                Ok(SeqItem::Shape(st.tensors[*t].shape.clone().unwrap_or(ArgValue::Opaque("input without shape".into()))))
            }
            other => Err(format!("{} added to a Sequential model at line {line}", other.describe())),
        };
        match item {
            Ok(item) => {
                if let ModelBody::Sequential(items) = &mut st.models[id].body {
                    items.push(item);
                }
            }
            Err(reason) => {
                self.diag(line, &reason);
                taint_model(st, id, reason);
            }
        }
    }
}

fn class_info(body: &[Stmt]) -> Rc<ClassInfo> {
    let methods = body
        .iter()
        .filter_map(|s| match &s.kind {
            StmtKind::FunctionDef(fd) => Some((fd.name.clone(), fd.clone())),
            _ => None,
        })
        .collect();
    Rc::new(ClassInfo { methods })
}

fn literal_default(e: &Expr) -> Val {
    match e {
        Expr::Int(i) => Val::Lit(Literal::Int(*i)),
        Expr::Float(f) => Val::Lit(Literal::Float(*f)),
        Expr::Str(s) => Val::Lit(Literal::Str(s.clone())),
        Expr::Bool(b) => Val::Bool(*b),
        Expr::None => Val::NoneV,
        Expr::UnaryOp(UnaryOp::Neg, inner) => match literal_default(inner) {
            Val::Lit(Literal::Int(i)) => Val::Lit(Literal::Int(-i)),
            Val::Lit(Literal::Float(f)) => Val::Lit(Literal::Float(-f)),
            _ => Val::Unknown,
        },
        Expr::Tuple(items) | Expr::List(items) => Val::Seq(Rc::new(items.iter().map(literal_default).collect())),
        _ => Val::Unknown,
    }
}

fn lookup_name(st: &State, n: &str) -> Val {
    if let Some(v) = st.lookup(n) {
        return v;
    }
    if BUILTINS.contains(&n) {
        return Val::Symbol(n.into());
    }
    match st.lookup("*") {
        Some(Val::Symbol(m)) => Val::Symbol(format!("{m}.{n}").into()),
        _ => Val::Unknown,
    }
}

fn lookup_dotted(st: &State, e: &Expr) -> Option<Val> {
    match e {
        Expr::Attribute(..) => e.dotted_name().and_then(|d| st.lookup(&d)),
        _ => None,
    }
}

/// Rebinds the receiver of a list-mutating method call.
fn rebind(st: &mut State, func: &Expr, v: Val) {
    if let Expr::Attribute(base, _) = func {
        if let Some(name) = base.dotted_name() {
            st.bind(&name, v);
        }
    }
}

fn assign(st: &mut State, target: &Expr, v: Val) {
    match target {
        Expr::Name(n) => st.bind(n, v),
        Expr::Tuple(targets) | Expr::List(targets) => {
            let items = v.items().filter(|i| i.len() == targets.len() && !targets.iter().any(|t| matches!(t, Expr::Starred(_))));
            match items {
                Some(items) => {
                    for (t, item) in targets.iter().zip(items) {
                        assign(st, t, item);
                    }
                }
                None => {
                    for t in targets {
                        assign(st, t, Val::Unknown);
                    }
                }
            }
        }
        Expr::Starred(inner) => assign(st, inner, Val::Unknown),
        Expr::Attribute(..) => {
            if let Some(d) = target.dotted_name() {
                st.bind(&d, v);
            }
        }
        _ => {}
    }
}

fn taint_model(st: &mut State, id: usize, reason: String) {
    st.models[id].taint.get_or_insert(reason);
}

fn collect_tensors(v: &Val, out: &mut Vec<usize>) {
    match v {
        Val::Tensor(t) => out.push(*t),
        Val::Seq(items) => items.iter().for_each(|i| collect_tensors(i, out)),
        _ => {}
    }
}

fn compare(a: &Val, op: CmpOp, b: &Val) -> Option<bool> {
    use std::cmp::Ordering;
    let ord = match (a, b) {
        (Val::Lit(Literal::Str(x)), Val::Lit(Literal::Str(y))) => Some(x.cmp(y)),
        (x, y) => match (x.num(), y.num()) {
            (Some(x), Some(y)) if matches!(a, Val::Lit(_) | Val::Bool(_)) && matches!(b, Val::Lit(_) | Val::Bool(_)) => {
                x.partial_cmp(&y)
            }
            _ => None,
        },
    };
    match op {
        CmpOp::Is | CmpOp::IsNot => {
            let same = match (a, b) {
                (Val::NoneV, Val::NoneV) => Some(true),
                (Val::NoneV, Val::Lit(_) | Val::Bool(_)) | (Val::Lit(_) | Val::Bool(_), Val::NoneV) => Some(false),
                (Val::Bool(x), Val::Bool(y)) => Some(x == y),
                _ => None,
            };
            same.map(|s| s == (op == CmpOp::Is))
        }
        CmpOp::In | CmpOp::NotIn => {
            let items = b.items()?;
            let mut found = Some(false);
            for item in &items {
                match compare(a, CmpOp::Eq, item) {
                    Some(true) => {
                        found = Some(true);
                        break;
                    }
                    Some(false) => {}
                    None => found = None,
                }
            }
            found.map(|f| f == (op == CmpOp::In))
        }
        CmpOp::Eq | CmpOp::NotEq => {
            let eq = match (a, b) {
                (Val::NoneV, Val::NoneV) => Some(true),
                (Val::NoneV, Val::Lit(_)) | (Val::Lit(_), Val::NoneV) => Some(false),
                _ => ord.map(|o| o == Ordering::Equal),
            };
            eq.map(|e| e == (op == CmpOp::Eq))
        }
        CmpOp::Lt => ord.map(|o| o == Ordering::Less),
        CmpOp::LtE => ord.map(|o| o != Ordering::Greater),
        CmpOp::Gt => ord.map(|o| o == Ordering::Greater),
        CmpOp::GtE => ord.map(|o| o != Ordering::Less),
    }
}

fn builtin(name: &str, ca: &CallArgs) -> Val {
    let ints: Option<Vec<i64>> = ca.pos.iter().map(Val::int).collect();
    match name {
        "range" if ca.kw.is_empty() => {
            let Some(ints) = ints else { return Val::Unknown };
            let (start, stop, step) = match ints.as_slice() {
                [stop] => (0, *stop, 1),
                [start, stop] => (*start, *stop, 1),
                [start, stop, step] if *step != 0 => (*start, *stop, *step),
                _ => return Val::Unknown,
            };
            let count = if step > 0 { (stop - start + step - 1).div_euclid(step) } else { (start - stop - step - 1).div_euclid(-step) };
            if count > MAX_RANGE {
                return Val::Unknown;
            }
            let items = (0..count.max(0)).map(|k| Val::Lit(Literal::Int(start + k * step))).collect();
            Val::Seq(Rc::new(items))
        }
        "len" => ca.pos.first().and_then(Val::items).map_or(Val::Unknown, |i| Val::Lit(Literal::Int(i.len() as i64))),
        "int" => match ca.pos.first() {
            Some(Val::Lit(Literal::Int(i))) => Val::Lit(Literal::Int(*i)),
            Some(Val::Lit(Literal::Float(f))) if f.is_finite() && f.abs() < 9.0e18 => Val::Lit(Literal::Int(f.trunc() as i64)),
            Some(Val::Lit(Literal::Str(s))) => s.trim().parse().map_or(Val::Unknown, |i| Val::Lit(Literal::Int(i))),
            _ => Val::Unknown,
        },
        "float" => match ca.pos.first().and_then(Val::num) {
            Some(f) if matches!(ca.pos[0], Val::Lit(_)) => Val::Lit(Literal::Float(f)),
            _ => Val::Unknown,
        },
        "list" | "tuple" => match ca.pos.first() {
            None => Val::Seq(Rc::new(Vec::new())),
            Some(v) => v.items().map_or(Val::Unknown, |i| Val::Seq(Rc::new(i))),
        },
        "enumerate" => match ca.pos.first().and_then(Val::items) {
            Some(items) => Val::Seq(Rc::new(
                items
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| Val::Seq(Rc::new(vec![Val::Lit(Literal::Int(i as i64)), v])))
                    .collect(),
            )),
            None => Val::Unknown,
        },
        "zip" => {
            let lists: Option<Vec<Vec<Val>>> = ca.pos.iter().map(Val::items).collect();
            match lists {
                Some(lists) if !lists.is_empty() => {
                    let n = lists.iter().map(Vec::len).min().unwrap_or(0);
                    Val::Seq(Rc::new(
                        (0..n).map(|k| Val::Seq(Rc::new(lists.iter().map(|l| l[k].clone()).collect()))).collect(),
                    ))
                }
                _ => Val::Unknown,
            }
        }
        "reversed" => match ca.pos.first().and_then(Val::items) {
            Some(mut items) => {
                items.reverse();
                Val::Seq(Rc::new(items))
            }
            None => Val::Unknown,
        },
        "min" | "max" | "sum" | "abs" => {
            let vals = match (ca.pos.len(), ca.pos.first().and_then(Val::items)) {
                (1, Some(items)) => items.iter().map(Val::int).collect::<Option<Vec<i64>>>(),
                _ => ints,
            };
            match (name, vals) {
                ("min", Some(v)) => v.iter().min().map_or(Val::Unknown, |m| Val::Lit(Literal::Int(*m))),
                ("max", Some(v)) => v.iter().max().map_or(Val::Unknown, |m| Val::Lit(Literal::Int(*m))),
                ("sum", Some(v)) => v.iter().try_fold(0i64, |a, b| a.checked_add(*b)).map_or(Val::Unknown, |s| Val::Lit(Literal::Int(s))),
                ("abs", Some(v)) if v.len() == 1 => v[0].checked_abs().map_or(Val::Unknown, |a| Val::Lit(Literal::Int(a))),
                _ => Val::Unknown,
            }
        }
        "print" => Val::NoneV,
        _ => Val::Unknown,
    }
}

fn sequential_raw(items: &[SeqItem]) -> Vec<RawLayer> {
    let mut out: Vec<RawLayer> = Vec::new();
    let mut pending: Option<ArgValue> = None;
    for item in items {
        match item {
            SeqItem::Shape(shape) => pending = Some(shape.clone()),
            SeqItem::Layer(lc) => {
                let inputs = if out.is_empty() { Vec::new() } else { vec![out.len() - 1] };
                let mut raw = lc.raw(inputs);
                if let Some(shape) = pending.take() {
                    if !raw.keywords.iter().any(|(k, _)| k == "input_shape") {
                        raw.keywords.push(("input_shape".into(), shape));
                    }
                }
                out.push(raw);
            }
        }
    }
    out
}

fn functional_raw(st: &State, inputs: Option<&Val>, outputs: Option<&Val>, line: usize) -> Result<Vec<RawLayer>, String> {
    let outs = outputs
        .and_then(Val::tensors)
        .ok_or_else(|| format!("outputs of the model at line {line} are not traced tensors"))?;
    if let Some(inputs) = inputs {
        if inputs.tensors().is_none() {
            return Err(format!("inputs of the model at line {line} are not traced tensors"));
        }
    }
    let mut reach: Vec<bool> = vec![false; st.tensors.len()];
    let mut stack = outs;
    while let Some(t) = stack.pop() {
        if reach[t] {
            continue;
        }
        reach[t] = true;
        stack.extend(st.tensors[t].inputs.iter().copied());
    }
    let mut index: Vec<Option<usize>> = vec![None; st.tensors.len()];
    let mut out: Vec<RawLayer> = Vec::new();
    for (t, node) in st.tensors.iter().enumerate() {
        if !reach[t] {
            continue;
        }
        if let Some(reason) = &node.taint {
            return Err(reason.clone());
        }
        let Some(lc) = &node.layer else { continue };
        let inputs: Vec<usize> = node.inputs.iter().filter_map(|i| index[*i]).collect();
        let mut raw = lc.raw(inputs);
        for &i in &node.inputs {
            let src = &st.tensors[i];
            let first_consumer = src.layer.is_none()
                && !(0..t).any(|u| reach[u] && st.tensors[u].layer.is_some() && st.tensors[u].inputs.contains(&i));
            if first_consumer {
                if let Some(shape) = &src.shape {
                    if !raw.keywords.iter().any(|(k, _)| k == "input_shape") {
                        raw.keywords.push(("input_shape".into(), shape.clone()));
                    }
                }
            }
        }
        index[t] = Some(out.len());
        out.push(raw);
    }
    Ok(out)
}
