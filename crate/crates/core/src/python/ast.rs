use std::rc::Rc;

#[derive(Debug, Clone, PartialEq)]
pub struct Module {
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub line: usize,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Expr(Expr),
    /// `a = b = value`
    Assign { targets: Vec<Expr>, value: Expr },
    AugAssign { target: Expr, op: BinOp, value: Expr },
    AnnAssign { target: Expr, value: Option<Expr> },
    Import(Vec<Alias>),
    /// `module` keeps leading dots of relative imports.
    ImportFrom { module: String, names: Vec<Alias> },
    FunctionDef(Rc<FunctionDef>),
    ClassDef { name: String, bases: Vec<Expr>, body: Vec<Stmt> },
    If { test: Expr, body: Vec<Stmt>, orelse: Vec<Stmt> },
    For { target: Expr, iter: Expr, body: Vec<Stmt>, orelse: Vec<Stmt> },
    While { test: Expr, body: Vec<Stmt>, orelse: Vec<Stmt> },
    With { items: Vec<(Expr, Option<Expr>)>, body: Vec<Stmt> },
    Try { body: Vec<Stmt>, handlers: Vec<Vec<Stmt>>, orelse: Vec<Stmt>, finalbody: Vec<Stmt> },
    Return(Option<Expr>),
    Raise,
    Pass,
    Break,
    Continue,
    Global(Vec<String>),
    Del(Vec<Expr>),
    Assert,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alias {
    pub name: String,
    pub asname: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Normal,
    VarArgs,
    KwOnly,
    KwArgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub default: Option<Expr>,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Pow,
    MatMul,
    LShift,
    RShift,
    BitOr,
    BitXor,
    BitAnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Pos,
    Not,
    Invert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    NotEq,
    Lt,
    LtE,
    Gt,
    GtE,
    In,
    NotIn,
    Is,
    IsNot,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Pos(Expr),
    Kw(String, Expr),
    Star(Expr),
    DoubleStar(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Name(String),
    Int(i64),
    Float(f64),
    /// Numbers outside the literal domain (complex, oversized ints).
    OpaqueNumber,
    Str(String),
    /// f-strings and byte strings.
    OpaqueStr,
    Bool(bool),
    None,
    Ellipsis,
    Tuple(Vec<Expr>),
    List(Vec<Expr>),
    Set(Vec<Expr>),
    Dict(Vec<(Option<Expr>, Expr)>),
    Attribute(Box<Expr>, String),
    Call { func: Box<Expr>, args: Vec<Arg>, line: usize },
    Subscript(Box<Expr>, Box<Expr>),
    Slice(Option<Box<Expr>>, Option<Box<Expr>>, Option<Box<Expr>>),
    BinOp(Box<Expr>, BinOp, Box<Expr>),
    UnaryOp(UnaryOp, Box<Expr>),
    /// `and` (true) / `or` (false) chains.
    BoolOp(bool, Vec<Expr>),
    Compare(Box<Expr>, Vec<(CmpOp, Expr)>),
    IfExp { test: Box<Expr>, body: Box<Expr>, orelse: Box<Expr> },
    Lambda,
    Comprehension,
    Starred(Box<Expr>),
    Await(Box<Expr>),
    Yield,
    NamedExpr(String, Box<Expr>),
}

impl Expr {
    /// Dotted rendering of `a.b.c` chains.
    pub fn dotted_name(&self) -> Option<String> {
        match self {
            Expr::Name(n) => Some(n.clone()),
            Expr::Attribute(base, attr) => base.dotted_name().map(|b| format!("{b}.{attr}")),
            _ => None,
        }
    }

    /// Last segment of a callee: `keras.layers.Conv2D` -> `Conv2D`.
    pub fn tail_name(&self) -> Option<&str> {
        match self {
            Expr::Name(n) => Some(n),
            Expr::Attribute(_, attr) => Some(attr),
            _ => None,
        }
    }
}

impl Expr {
    /// Visits this expression and every sub-expression, outermost first.
    pub fn walk(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Tuple(items) | Expr::List(items) | Expr::Set(items) | Expr::BoolOp(_, items) => {
                items.iter().for_each(|e| e.walk(f))
            }
            Expr::Dict(items) => {
                for (k, v) in items {
                    if let Some(k) = k {
                        k.walk(f);
                    }
                    v.walk(f);
                }
            }
            Expr::Attribute(base, _) => base.walk(f),
            Expr::Call { func, args, .. } => {
                func.walk(f);
                for arg in args {
                    match arg {
                        Arg::Pos(e) | Arg::Kw(_, e) | Arg::Star(e) | Arg::DoubleStar(e) => e.walk(f),
                    }
                }
            }
            Expr::Subscript(a, b) | Expr::BinOp(a, _, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::Slice(a, b, c) => {
                for e in [a, b, c].into_iter().flatten() {
                    e.walk(f);
                }
            }
            Expr::UnaryOp(_, e) | Expr::Starred(e) | Expr::Await(e) | Expr::NamedExpr(_, e) => e.walk(f),
            Expr::Compare(first, rest) => {
                first.walk(f);
                rest.iter().for_each(|(_, e)| e.walk(f));
            }
            Expr::IfExp { test, body, orelse } => {
                test.walk(f);
                body.walk(f);
                orelse.walk(f);
            }
            _ => {}
        }
    }
}

impl Stmt {
    /// Expressions appearing directly in this statement (not in nested blocks).
    pub fn exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Expr(e) => vec![e],
            StmtKind::Assign { targets, value } => targets.iter().chain(std::iter::once(value)).collect(),
            StmtKind::AugAssign { target, value, .. } => vec![target, value],
            StmtKind::AnnAssign { target, value } => std::iter::once(target).chain(value.as_ref()).collect(),
            StmtKind::FunctionDef(fd) => fd.params.iter().filter_map(|p| p.default.as_ref()).collect(),
            StmtKind::ClassDef { bases, .. } => bases.iter().collect(),
            StmtKind::If { test, .. } | StmtKind::While { test, .. } => vec![test],
            StmtKind::For { target, iter, .. } => vec![target, iter],
            StmtKind::With { items, .. } => {
                items.iter().flat_map(|(a, b)| std::iter::once(a).chain(b.as_ref())).collect()
            }
            StmtKind::Return(Some(e)) => vec![e],
            StmtKind::Del(targets) => targets.iter().collect(),
            _ => Vec::new(),
        }
    }

    /// Nested statement blocks.
    pub fn blocks(&self) -> Vec<&[Stmt]> {
        match &self.kind {
            StmtKind::FunctionDef(fd) => vec![&fd.body],
            StmtKind::ClassDef { body, .. } => vec![body],
            StmtKind::If { body, orelse, .. }
            | StmtKind::For { body, orelse, .. }
            | StmtKind::While { body, orelse, .. } => vec![body, orelse],
            StmtKind::With { body, .. } => vec![body],
            StmtKind::Try { body, handlers, orelse, finalbody } => {
                let mut out: Vec<&[Stmt]> = vec![body];
                out.extend(handlers.iter().map(Vec::as_slice));
                out.push(orelse);
                out.push(finalbody);
                out
            }
            _ => Vec::new(),
        }
    }
}

/// Visits every statement, including those nested in blocks and function
/// bodies, in source order.
pub fn walk_stmts(stmts: &[Stmt], f: &mut dyn FnMut(&Stmt)) {
    for stmt in stmts {
        f(stmt);
        for block in stmt.blocks() {
            walk_stmts(block, f);
        }
    }
}
