use std::rc::Rc;

use super::ast::*;
use super::lexer::{Tok, Token};
use super::ParseError;

type PResult<T> = Result<T, ParseError>;

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue",
    "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in",
    "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while", "with",
    "yield",
];

pub struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    pub fn new(tokens: Vec<Token>) -> Self {
        Parser { tokens, pos: 0 }
    }

    fn tok(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_tok(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn line(&self) -> usize {
        self.tokens[self.pos].line
    }

    fn advance(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError { line: self.line(), message: msg.into() })
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(self.tok(), Tok::Op(o) if *o == op)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.tok(), Tok::Name(n) if n == kw)
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.is_op(op) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> PResult<()> {
        if self.eat_op(op) {
            Ok(())
        } else {
            self.err(format!("expected `{op}`, found {}", self.tok()))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.err(format!("expected `{kw}`, found {}", self.tok()))
        }
    }

    fn name(&mut self) -> PResult<String> {
        match self.tok().clone() {
            Tok::Name(n) if !KEYWORDS.contains(&n.as_str()) => {
                self.advance();
                Ok(n)
            }
            other => self.err(format!("expected a name, found {other}")),
        }
    }

    pub fn module(&mut self) -> PResult<Module> {
        let mut body = Vec::new();
        while *self.tok() != Tok::Eof {
            if *self.tok() == Tok::Newline {
                self.advance();
                continue;
            }
            body.extend(self.statement()?);
        }
        Ok(Module { body })
    }

    fn statement(&mut self) -> PResult<Vec<Stmt>> {
        let line = self.line();
        let kind = match self.tok() {
            Tok::Name(n) => match n.as_str() {
                "if" => Some(self.if_stmt()?),
                "while" => Some(self.while_stmt()?),
                "for" => Some(self.for_stmt()?),
                "try" => Some(self.try_stmt()?),
                "with" => Some(self.with_stmt()?),
                "def" => Some(self.funcdef()?),
                "class" => Some(self.classdef()?),
                "async" => {
                    self.advance();
                    match self.tok() {
                        Tok::Name(n) if n == "def" => Some(self.funcdef()?),
                        Tok::Name(n) if n == "for" => Some(self.for_stmt()?),
                        Tok::Name(n) if n == "with" => Some(self.with_stmt()?),
                        _ => return self.err("expected def, for or with after async"),
                    }
                }
                _ => None,
            },
            Tok::Op("@") => {
                while self.eat_op("@") {
                    self.namedexpr_test()?;
                    self.expect_newline()?;
                }
                if self.eat_kw("async") && !self.is_kw("def") {
                    return self.err("expected def after async");
                }
                if self.is_kw("def") {
                    Some(self.funcdef()?)
                } else if self.is_kw("class") {
                    Some(self.classdef()?)
                } else {
                    return self.err("decorator without def or class");
                }
            }
            Tok::Indent => return self.err("unexpected indent"),
            _ => None,
        };
        match kind {
            Some(kind) => Ok(vec![Stmt { line, kind }]),
            None => self.simple_stmts(),
        }
    }

    fn expect_newline(&mut self) -> PResult<()> {
        match self.tok() {
            Tok::Newline => {
                self.advance();
                Ok(())
            }
            Tok::Eof => Ok(()),
            other => self.err(format!("expected end of line, found {other}")),
        }
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_op(":")?;
        if *self.tok() == Tok::Newline {
            self.advance();
            if *self.tok() != Tok::Indent {
                return self.err("expected an indented block");
            }
            self.advance();
            let mut body = Vec::new();
            while *self.tok() != Tok::Dedent && *self.tok() != Tok::Eof {
                if *self.tok() == Tok::Newline {
                    self.advance();
                    continue;
                }
                body.extend(self.statement()?);
            }
            if *self.tok() == Tok::Dedent {
                self.advance();
            }
            Ok(body)
        } else {
            self.simple_stmts()
        }
    }

    fn if_stmt(&mut self) -> PResult<StmtKind> {
        self.advance(); // if / elif
        let test = self.namedexpr_test()?;
        let body = self.block()?;
        let orelse = if self.is_kw("elif") {
            let line = self.line();
            vec![Stmt { line, kind: self.if_stmt()? }]
        } else if self.eat_kw("else") {
            self.block()?
        } else {
            Vec::new()
        };
        Ok(StmtKind::If { test, body, orelse })
    }

    fn while_stmt(&mut self) -> PResult<StmtKind> {
        self.expect_kw("while")?;
        let test = self.namedexpr_test()?;
        let body = self.block()?;
        let orelse = if self.eat_kw("else") { self.block()? } else { Vec::new() };
        Ok(StmtKind::While { test, body, orelse })
    }

    fn for_stmt(&mut self) -> PResult<StmtKind> {
        self.expect_kw("for")?;
        let target = self.exprlist()?;
        self.expect_kw("in")?;
        let iter = self.star_expressions()?;
        let body = self.block()?;
        let orelse = if self.eat_kw("else") { self.block()? } else { Vec::new() };
        Ok(StmtKind::For { target, iter, body, orelse })
    }

    fn try_stmt(&mut self) -> PResult<StmtKind> {
        self.expect_kw("try")?;
        let body = self.block()?;
        let mut handlers = Vec::new();
        while self.eat_kw("except") {
            self.eat_op("*");
            if !self.is_op(":") {
                self.test()?;
                if self.eat_kw("as") {
                    self.name()?;
                } else if self.is_op(",") {
                    return self.err("python 2 except clause");
                }
            }
            handlers.push(self.block()?);
        }
        let orelse = if self.eat_kw("else") { self.block()? } else { Vec::new() };
        let finalbody = if self.eat_kw("finally") { self.block()? } else { Vec::new() };
        if handlers.is_empty() && finalbody.is_empty() {
            return self.err("try without except or finally");
        }
        Ok(StmtKind::Try { body, handlers, orelse, finalbody })
    }

    fn with_stmt(&mut self) -> PResult<StmtKind> {
        self.expect_kw("with")?;
        let mut items = Vec::new();
        loop {
            let ctx = self.test()?;
            let var = if self.eat_kw("as") { Some(self.star_target()?) } else { None };
            items.push((ctx, var));
            if !self.eat_op(",") {
                break;
            }
        }
        let body = self.block()?;
        Ok(StmtKind::With { items, body })
    }

    fn funcdef(&mut self) -> PResult<StmtKind> {
        let line = self.line();
        self.expect_kw("def")?;
        let name = self.name()?;
        self.expect_op("(")?;
        let params = self.params(")", true)?;
        self.expect_op(")")?;
        if self.eat_op("->") {
            self.test()?;
        }
        let body = self.block()?;
        Ok(StmtKind::FunctionDef(Rc::new(FunctionDef { name, params, body, line })))
    }

    fn params(&mut self, close: &str, annotations: bool) -> PResult<Vec<Param>> {
        let mut params = Vec::new();
        let mut kw_only = false;
        while !self.is_op(close) {
            if self.eat_op("/") {
            } else if self.eat_op("**") {
                let name = self.name()?;
                if annotations && self.eat_op(":") {
                    self.test()?;
                }
                params.push(Param { name, default: None, kind: ParamKind::KwArgs });
            } else if self.eat_op("*") {
                kw_only = true;
                if !self.is_op(",") && !self.is_op(close) {
                    let name = self.name()?;
                    if annotations && self.eat_op(":") {
                        self.test()?;
                    }
                    params.push(Param { name, default: None, kind: ParamKind::VarArgs });
                }
            } else {
                let name = self.name()?;
                if annotations && self.eat_op(":") {
                    self.test()?;
                }
                let default = if self.eat_op("=") { Some(self.test()?) } else { None };
                let kind = if kw_only { ParamKind::KwOnly } else { ParamKind::Normal };
                params.push(Param { name, default, kind });
            }
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(params)
    }

    fn classdef(&mut self) -> PResult<StmtKind> {
        self.expect_kw("class")?;
        let name = self.name()?;
        let mut bases = Vec::new();
        if self.eat_op("(") {
            for arg in self.call_args()? {
                if let Arg::Pos(e) = arg {
                    bases.push(e);
                }
            }
        }
        let body = self.block()?;
        Ok(StmtKind::ClassDef { name, bases, body })
    }

    fn simple_stmts(&mut self) -> PResult<Vec<Stmt>> {
        let mut out = Vec::new();
        loop {
            let line = self.line();
            let kind = self.small_stmt()?;
            out.push(Stmt { line, kind });
            if !self.eat_op(";") {
                break;
            }
            if matches!(self.tok(), Tok::Newline | Tok::Eof) {
                break;
            }
        }
        self.expect_newline()?;
        Ok(out)
    }

    fn small_stmt(&mut self) -> PResult<StmtKind> {
        if let Tok::Name(n) = self.tok().clone() {
            match n.as_str() {
                "pass" => {
                    self.advance();
                    return Ok(StmtKind::Pass);
                }
                "break" => {
                    self.advance();
                    return Ok(StmtKind::Break);
                }
                "continue" => {
                    self.advance();
                    return Ok(StmtKind::Continue);
                }
                "return" => {
                    self.advance();
                    let value = if self.at_stmt_end() { None } else { Some(self.star_expressions()?) };
                    return Ok(StmtKind::Return(value));
                }
                "raise" => {
                    self.advance();
                    if !self.at_stmt_end() {
                        self.test()?;
                        if self.eat_kw("from") {
                            self.test()?;
                        } else if self.is_op(",") {
                            return self.err("python 2 raise statement");
                        }
                    }
                    return Ok(StmtKind::Raise);
                }
                "global" | "nonlocal" => {
                    self.advance();
                    let mut names = vec![self.name()?];
                    while self.eat_op(",") {
                        names.push(self.name()?);
                    }
                    return Ok(StmtKind::Global(names));
                }
                "del" => {
                    self.advance();
                    let target = self.exprlist()?;
                    let targets = match target {
                        Expr::Tuple(items) => items,
                        other => vec![other],
                    };
                    return Ok(StmtKind::Del(targets));
                }
                "assert" => {
                    self.advance();
                    self.test()?;
                    if self.eat_op(",") {
                        self.test()?;
                    }
                    return Ok(StmtKind::Assert);
                }
                "import" => {
                    self.advance();
                    let mut names = Vec::new();
                    loop {
                        let name = self.dotted_name()?;
                        let asname = if self.eat_kw("as") { Some(self.name()?) } else { None };
                        names.push(Alias { name, asname });
                        if !self.eat_op(",") {
                            break;
                        }
                    }
                    return Ok(StmtKind::Import(names));
                }
                "from" => {
                    self.advance();
                    let mut module = String::new();
                    loop {
                        if self.eat_op(".") {
                            module.push('.');
                        } else if self.eat_op("...") {
                            module.push_str("...");
                        } else {
                            break;
                        }
                    }
                    if !self.is_kw("import") {
                        module.push_str(&self.dotted_name()?);
                    }
                    self.expect_kw("import")?;
                    let mut names = Vec::new();
                    if self.eat_op("*") {
                        names.push(Alias { name: "*".into(), asname: None });
                    } else {
                        let paren = self.eat_op("(");
                        loop {
                            if paren && self.is_op(")") {
                                break;
                            }
                            let name = self.name()?;
                            let asname = if self.eat_kw("as") { Some(self.name()?) } else { None };
                            names.push(Alias { name, asname });
                            if !self.eat_op(",") {
                                break;
                            }
                        }
                        if paren {
                            self.expect_op(")")?;
                        }
                    }
                    return Ok(StmtKind::ImportFrom { module, names });
                }
                _ => {}
            }
        }
        self.expr_stmt()
    }

    fn at_stmt_end(&self) -> bool {
        matches!(self.tok(), Tok::Newline | Tok::Eof | Tok::Op(";"))
    }

    fn dotted_name(&mut self) -> PResult<String> {
        let mut name = self.name()?;
        while self.eat_op(".") {
            name.push('.');
            name.push_str(&self.name()?);
        }
        Ok(name)
    }

    fn expr_stmt(&mut self) -> PResult<StmtKind> {
        let first = self.star_expressions()?;
        if self.eat_op(":") {
            self.test()?;
            let value = if self.eat_op("=") { Some(self.assign_rhs()?) } else { None };
            return Ok(StmtKind::AnnAssign { target: first, value });
        }
        if let Tok::Op(op) = self.tok().clone() {
            let aug = match op {
                "+=" => Some(BinOp::Add),
                "-=" => Some(BinOp::Sub),
                "*=" => Some(BinOp::Mul),
                "/=" => Some(BinOp::Div),
                "//=" => Some(BinOp::FloorDiv),
                "%=" => Some(BinOp::Mod),
                "**=" => Some(BinOp::Pow),
                "@=" => Some(BinOp::MatMul),
                "<<=" => Some(BinOp::LShift),
                ">>=" => Some(BinOp::RShift),
                "|=" => Some(BinOp::BitOr),
                "^=" => Some(BinOp::BitXor),
                "&=" => Some(BinOp::BitAnd),
                _ => None,
            };
            if let Some(op) = aug {
                self.advance();
                let value = self.assign_rhs()?;
                return Ok(StmtKind::AugAssign { target: first, op, value });
            }
        }
        if self.is_op("=") {
            let mut targets = vec![first];
            let mut value;
            loop {
                self.expect_op("=")?;
                value = self.assign_rhs()?;
                if self.is_op("=") {
                    targets.push(value);
                } else {
                    break;
                }
            }
            return Ok(StmtKind::Assign { targets, value });
        }
        Ok(StmtKind::Expr(first))
    }

    fn assign_rhs(&mut self) -> PResult<Expr> {
        if self.is_kw("yield") {
            return self.yield_expr();
        }
        self.star_expressions()
    }

    fn yield_expr(&mut self) -> PResult<Expr> {
        self.expect_kw("yield")?;
        if self.eat_kw("from") {
            self.test()?;
        } else if !self.at_stmt_end() && !self.is_op(")") && !self.is_op("=") {
            self.star_expressions()?;
        }
        Ok(Expr::Yield)
    }

    /// Comma-separated expressions, possibly starred; a trailing or inner
    /// comma makes a tuple.
    fn star_expressions(&mut self) -> PResult<Expr> {
        let first = self.star_or_namedexpr()?;
        if !self.is_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.expr_cannot_start() {
                break;
            }
            items.push(self.star_or_namedexpr()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn expr_cannot_start(&self) -> bool {
        match self.tok() {
            Tok::Newline | Tok::Eof | Tok::Indent | Tok::Dedent => true,
            Tok::Op(o) => matches!(*o, ")" | "]" | "}" | "=" | ":" | ";") || o.ends_with('=') && *o != "==",
            Tok::Name(n) => matches!(n.as_str(), "in" | "for" | "if" | "else"),
            _ => false,
        }
    }

    fn star_or_namedexpr(&mut self) -> PResult<Expr> {
        if self.eat_op("*") {
            return Ok(Expr::Starred(Box::new(self.bitor()?)));
        }
        self.namedexpr_test()
    }

    fn star_target(&mut self) -> PResult<Expr> {
        self.exprlist()
    }

    /// Targets of `for` and `del`: bit-or expressions joined by commas.
    fn exprlist(&mut self) -> PResult<Expr> {
        let parse_one = |p: &mut Self| -> PResult<Expr> {
            if p.eat_op("*") {
                Ok(Expr::Starred(Box::new(p.bitor()?)))
            } else {
                p.bitor()
            }
        };
        let first = parse_one(self)?;
        if !self.is_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.expr_cannot_start() {
                break;
            }
            items.push(parse_one(self)?);
        }
        Ok(Expr::Tuple(items))
    }

    fn namedexpr_test(&mut self) -> PResult<Expr> {
        if let (Tok::Name(n), Tok::Op(":=")) = (self.tok().clone(), self.peek_tok(1).clone()) {
            if !KEYWORDS.contains(&n.as_str()) {
                self.advance();
                self.advance();
                let value = self.test()?;
                return Ok(Expr::NamedExpr(n, Box::new(value)));
            }
        }
        self.test()
    }

    fn test(&mut self) -> PResult<Expr> {
        if self.is_kw("lambda") {
            return self.lambda();
        }
        let body = self.or_test()?;
        if self.is_kw("if") {
            // Inside comprehensions `if` belongs to the comprehension; it is
            // only a conditional expression when followed by `else`.
            let save = self.pos;
            self.advance();
            let test = self.or_test()?;
            if self.eat_kw("else") {
                let orelse = self.test()?;
                return Ok(Expr::IfExp { test: Box::new(test), body: Box::new(body), orelse: Box::new(orelse) });
            }
            self.pos = save;
        }
        Ok(body)
    }

    fn test_nocond(&mut self) -> PResult<Expr> {
        if self.is_kw("lambda") {
            return self.lambda();
        }
        self.or_test()
    }

    fn lambda(&mut self) -> PResult<Expr> {
        self.expect_kw("lambda")?;
        self.params(":", false)?;
        self.expect_op(":")?;
        self.test()?;
        Ok(Expr::Lambda)
    }

    fn or_test(&mut self) -> PResult<Expr> {
        let first = self.and_test()?;
        if !self.is_kw("or") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_kw("or") {
            items.push(self.and_test()?);
        }
        Ok(Expr::BoolOp(false, items))
    }

    fn and_test(&mut self) -> PResult<Expr> {
        let first = self.not_test()?;
        if !self.is_kw("and") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_kw("and") {
            items.push(self.not_test()?);
        }
        Ok(Expr::BoolOp(true, items))
    }

    fn not_test(&mut self) -> PResult<Expr> {
        if self.eat_kw("not") {
            return Ok(Expr::UnaryOp(UnaryOp::Not, Box::new(self.not_test()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let left = self.bitor()?;
        let mut ops = Vec::new();
        loop {
            let op = match self.tok() {
                Tok::Op("==") => CmpOp::Eq,
                Tok::Op("!=") => CmpOp::NotEq,
                Tok::Op("<") => CmpOp::Lt,
                Tok::Op("<=") => CmpOp::LtE,
                Tok::Op(">") => CmpOp::Gt,
                Tok::Op(">=") => CmpOp::GtE,
                Tok::Name(n) if n == "in" => CmpOp::In,
                Tok::Name(n) if n == "is" => {
                    if matches!(self.peek_tok(1), Tok::Name(m) if m == "not") {
                        self.advance();
                        CmpOp::IsNot
                    } else {
                        CmpOp::Is
                    }
                }
                Tok::Name(n) if n == "not" && matches!(self.peek_tok(1), Tok::Name(m) if m == "in") => {
                    self.advance();
                    CmpOp::NotIn
                }
                _ => break,
            };
            self.advance();
            ops.push((op, self.bitor()?));
        }
        if ops.is_empty() {
            Ok(left)
        } else {
            Ok(Expr::Compare(Box::new(left), ops))
        }
    }

    fn binary_level(
        &mut self,
        next: fn(&mut Self) -> PResult<Expr>,
        table: &[(&str, BinOp)],
    ) -> PResult<Expr> {
        let mut left = next(self)?;
        'outer: loop {
            for (sym, op) in table {
                if self.is_op(sym) {
                    self.advance();
                    let right = next(self)?;
                    left = Expr::BinOp(Box::new(left), *op, Box::new(right));
                    continue 'outer;
                }
            }
            return Ok(left);
        }
    }

    fn bitor(&mut self) -> PResult<Expr> {
        self.binary_level(Self::bitxor, &[("|", BinOp::BitOr)])
    }

    fn bitxor(&mut self) -> PResult<Expr> {
        self.binary_level(Self::bitand, &[("^", BinOp::BitXor)])
    }

    fn bitand(&mut self) -> PResult<Expr> {
        self.binary_level(Self::shift, &[("&", BinOp::BitAnd)])
    }

    fn shift(&mut self) -> PResult<Expr> {
        self.binary_level(Self::arith, &[("<<", BinOp::LShift), (">>", BinOp::RShift)])
    }

    fn arith(&mut self) -> PResult<Expr> {
        self.binary_level(Self::term, &[("+", BinOp::Add), ("-", BinOp::Sub)])
    }

    fn term(&mut self) -> PResult<Expr> {
        self.binary_level(
            Self::factor,
            &[
                ("*", BinOp::Mul),
                ("/", BinOp::Div),
                ("//", BinOp::FloorDiv),
                ("%", BinOp::Mod),
                ("@", BinOp::MatMul),
            ],
        )
    }

    fn factor(&mut self) -> PResult<Expr> {
        let op = match self.tok() {
            Tok::Op("-") => UnaryOp::Neg,
            Tok::Op("+") => UnaryOp::Pos,
            Tok::Op("~") => UnaryOp::Invert,
            _ => return self.power(),
        };
        self.advance();
        Ok(Expr::UnaryOp(op, Box::new(self.factor()?)))
    }

    fn power(&mut self) -> PResult<Expr> {
        let base = if self.eat_kw("await") {
            Expr::Await(Box::new(self.primary()?))
        } else {
            self.primary()?
        };
        if self.eat_op("**") {
            let exp = self.factor()?;
            return Ok(Expr::BinOp(Box::new(base), BinOp::Pow, Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let mut e = self.atom()?;
        loop {
            if self.is_op("(") {
                let line = self.line();
                self.advance();
                let args = self.call_args()?;
                e = Expr::Call { func: Box::new(e), args, line };
            } else if self.eat_op("[") {
                let index = self.subscript_list()?;
                self.expect_op("]")?;
                e = Expr::Subscript(Box::new(e), Box::new(index));
            } else if self.eat_op(".") {
                let attr = match self.advance() {
                    Tok::Name(n) => n,
                    other => return self.err(format!("expected attribute name, found {other}")),
                };
                e = Expr::Attribute(Box::new(e), attr);
            } else {
                return Ok(e);
            }
        }
    }

    /// Arguments after `(`; consumes the closing `)`.
    fn call_args(&mut self) -> PResult<Vec<Arg>> {
        let mut args = Vec::new();
        while !self.is_op(")") {
            if self.eat_op("**") {
                args.push(Arg::DoubleStar(self.test()?));
            } else if self.eat_op("*") {
                args.push(Arg::Star(self.test()?));
            } else if let (Tok::Name(n), Tok::Op("=")) = (self.tok().clone(), self.peek_tok(1).clone()) {
                self.advance();
                self.advance();
                args.push(Arg::Kw(n, self.test()?));
            } else {
                let e = self.namedexpr_test()?;
                if self.is_kw("for") || self.is_kw("async") {
                    self.comp_tail()?;
                    args.push(Arg::Pos(Expr::Comprehension));
                } else {
                    args.push(Arg::Pos(e));
                }
            }
            if !self.eat_op(",") {
                break;
            }
        }
        self.expect_op(")")?;
        Ok(args)
    }

    fn subscript_list(&mut self) -> PResult<Expr> {
        let first = self.subscript()?;
        if !self.is_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.is_op("]") {
                break;
            }
            items.push(self.subscript()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn subscript(&mut self) -> PResult<Expr> {
        let lower = if self.is_op(":") { None } else { Some(self.star_or_namedexpr()?) };
        if !self.eat_op(":") {
            return lower.ok_or_else(|| ParseError { line: self.line(), message: "empty subscript".into() });
        }
        let upper = if self.is_op(":") || self.is_op(",") || self.is_op("]") { None } else { Some(Box::new(self.test()?)) };
        let step = if self.eat_op(":") {
            if self.is_op(",") || self.is_op("]") {
                None
            } else {
                Some(Box::new(self.test()?))
            }
        } else {
            None
        };
        Ok(Expr::Slice(lower.map(Box::new), upper, step))
    }

    fn comp_tail(&mut self) -> PResult<()> {
        loop {
            if self.eat_kw("async") {
                continue;
            }
            if self.eat_kw("for") {
                self.exprlist()?;
                self.expect_kw("in")?;
                self.or_test()?;
            } else if self.eat_kw("if") {
                self.test_nocond()?;
            } else {
                return Ok(());
            }
        }
    }

    fn atom(&mut self) -> PResult<Expr> {
        let tok = self.tok().clone();
        match tok {
            Tok::Op("(") => {
                self.advance();
                if self.eat_op(")") {
                    return Ok(Expr::Tuple(Vec::new()));
                }
                if self.is_kw("yield") {
                    let e = self.yield_expr()?;
                    self.expect_op(")")?;
                    return Ok(e);
                }
                let first = self.star_or_namedexpr()?;
                if self.is_kw("for") || self.is_kw("async") {
                    self.comp_tail()?;
                    self.expect_op(")")?;
                    return Ok(Expr::Comprehension);
                }
                if self.eat_op(")") {
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.is_op(")") {
                        break;
                    }
                    items.push(self.star_or_namedexpr()?);
                }
                self.expect_op(")")?;
                Ok(Expr::Tuple(items))
            }
            Tok::Op("[") => {
                self.advance();
                let mut items = Vec::new();
                while !self.is_op("]") {
                    let e = self.star_or_namedexpr()?;
                    if items.is_empty() && (self.is_kw("for") || self.is_kw("async")) {
                        self.comp_tail()?;
                        self.expect_op("]")?;
                        return Ok(Expr::Comprehension);
                    }
                    items.push(e);
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op("]")?;
                Ok(Expr::List(items))
            }
            Tok::Op("{") => {
                self.advance();
                self.dict_or_set()
            }
            Tok::Op("...") => {
                self.advance();
                Ok(Expr::Ellipsis)
            }
            Tok::Int(v) => {
                self.advance();
                Ok(Expr::Int(v))
            }
            Tok::Float(v) => {
                self.advance();
                Ok(Expr::Float(v))
            }
            Tok::BigInt | Tok::Imaginary => {
                self.advance();
                Ok(Expr::OpaqueNumber)
            }
            Tok::Str { .. } => {
                let mut value = String::new();
                let mut opaque = false;
                while let Tok::Str { value: v, formatted, bytes } = self.tok().clone() {
                    self.advance();
                    opaque |= formatted || bytes;
                    value.push_str(&v);
                }
                Ok(if opaque { Expr::OpaqueStr } else { Expr::Str(value) })
            }
            Tok::Name(n) => match n.as_str() {
                "True" => {
                    self.advance();
                    Ok(Expr::Bool(true))
                }
                "False" => {
                    self.advance();
                    Ok(Expr::Bool(false))
                }
                "None" => {
                    self.advance();
                    Ok(Expr::None)
                }
                _ => Ok(Expr::Name(self.name()?)),
            },
            other => self.err(format!("unexpected token {other:?}")),
        }
    }

    fn dict_or_set(&mut self) -> PResult<Expr> {
        if self.eat_op("}") {
            return Ok(Expr::Dict(Vec::new()));
        }
        let mut dict: Vec<(Option<Expr>, Expr)> = Vec::new();
        let mut set: Vec<Expr> = Vec::new();
        let mut is_dict = None;
        loop {
            if self.is_op("}") {
                break;
            }
            if self.eat_op("**") {
                is_dict = Some(true);
                dict.push((None, self.bitor()?));
            } else {
                let first = self.star_or_namedexpr()?;
                if self.eat_op(":") {
                    is_dict = Some(true);
                    let value = self.test()?;
                    if self.is_kw("for") || self.is_kw("async") {
                        self.comp_tail()?;
                        self.expect_op("}")?;
                        return Ok(Expr::Comprehension);
                    }
                    dict.push((Some(first), value));
                } else {
                    is_dict.get_or_insert(false);
                    if self.is_kw("for") || self.is_kw("async") {
                        self.comp_tail()?;
                        self.expect_op("}")?;
                        return Ok(Expr::Comprehension);
                    }
                    set.push(first);
                }
            }
            if !self.eat_op(",") {
                break;
            }
        }
        self.expect_op("}")?;
        Ok(if is_dict == Some(false) { Expr::Set(set) } else { Expr::Dict(dict) })
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_module;
    use super::*;

    #[test]
    fn parses_sequential_model_script() {
        let src = r#"
from keras.models import Sequential
from keras.layers import Conv2D, Dense  # comment
import numpy as np

model = Sequential()
model.add(Conv2D(64, kernel_size=(3, 3), activation='relu', input_shape=(3, 120, 180)))
for i in range(3):
    model.add(Dense(10, activation="softmax"))
if x > 1 and not y:
    pass
elif z:
    a, b = 1, 2
else:
    c = [i * 2 for i in range(4) if i]
model.compile(loss='categorical_crossentropy', optimizer=sgd, metrics=['accuracy'])
"#;
        let m = parse_module(src).unwrap();
        assert_eq!(m.body.len(), 8);
        assert!(matches!(m.body[5].kind, StmtKind::For { .. }));
        let StmtKind::If { orelse, .. } = &m.body[6].kind else { panic!() };
        assert!(matches!(orelse[0].kind, StmtKind::If { .. }));
    }

    #[test]
    fn parses_assorted_syntax() {
        let src = r#"
@decorator(arg=1)
def f(a, b: int = 2, *args, c, **kwargs) -> None:
    """doc"""
    x = lambda q, r=1: q + r
    y = {k: v for k, v in d.items()}
    z = {1, 2}
    w = a[1:2, ::3, ...]
    with open(p) as fh, ctx():
        data = fh.read()
    try:
        g(*args, **kwargs)
    except (ValueError, KeyError) as e:
        raise RuntimeError("bad") from e
    finally:
        pass
    while (n := n - 1) > 0:
        continue
    return -x ** 2, not y

class Net(Model):
    def __init__(self):
        super().__init__()
        self.conv = Conv2D(32, 3)

async def h():
    await q
x: int = 5
s = f"{x}" "y"
t = (yield_ for yield_ in range(3))
u = 1 if v else 2
"#;
        let m = parse_module(src).unwrap();
        assert_eq!(m.body.len(), 7);
    }

    #[test]
    fn python2_print_is_rejected() {
        let err = parse_module("import keras\nprint \"hello\"\n").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn call_line_numbers() {
        let m = parse_module("\n\nf(1)\n").unwrap();
        let StmtKind::Expr(Expr::Call { line, .. }) = &m.body[0].kind else { panic!() };
        assert_eq!(*line, 3);
    }
}
