use std::fmt::{self, Write as _};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    StartsWith,
    Contains,
    Equals,
    Len,
    Exists,
    Get,
    RecipeFor,
}

impl Func {
    pub const ALL: [Func; 7] =
        [Func::StartsWith, Func::Contains, Func::Equals, Func::Len, Func::Exists, Func::Get, Func::RecipeFor];

    pub fn name(self) -> &'static str {
        match self {
            Func::StartsWith => "starts_with",
            Func::Contains => "contains",
            Func::Equals => "equals",
            Func::Len => "len",
            Func::Exists => "exists",
            Func::Get => "get",
            Func::RecipeFor => "recipe_for",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Len | Func::Exists | Func::RecipeFor => 1,
            Func::StartsWith | Func::Contains | Func::Equals => 2,
            Func::Get => 3,
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "or",
            BinOp::And => "and",
            BinOp::Eq => "=",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
        }
    }

    fn prec(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.prec() == 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantifier {
    Any,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Null,
    Bool(bool),
    Num(f64),
    Str(String),
    Var(String),
    Field(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    Not(Box<Expr>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// Body extends as far right as possible.
    Quant(Quantifier, String, Box<Expr>, Box<Expr>),
}

pub const RESERVED: &[&str] =
    &["and", "or", "not", "any", "all", "in", "true", "false", "null", "when", "if", "then", "block", "suggest"];

const PREC_QUANT: u8 = 0;
const PREC_NOT: u8 = 3;
const PREC_NEG: u8 = 7;
const PREC_ATOM: u8 = 8;

impl Expr {
    fn prec(&self) -> u8 {
        match self {
            Expr::Quant(..) => PREC_QUANT,
            Expr::Bin(op, ..) => op.prec(),
            Expr::Not(_) => PREC_NOT,
            Expr::Neg(_) => PREC_NEG,
            _ => PREC_ATOM,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.prec() < min {
            f.write_char('(')?;
            self.write_at(f, 0)?;
            return f.write_char(')');
        }
        match self {
            Expr::Null => f.write_str("null"),
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Num(n) => write_num(f, *n),
            Expr::Str(s) => write_str_lit(f, s),
            Expr::Var(v) => f.write_str(v),
            Expr::Field(base, name) => {
                base.write_at(f, PREC_ATOM)?;
                write!(f, ".{name}")
            }
            Expr::Index(base, idx) => {
                base.write_at(f, PREC_ATOM)?;
                f.write_char('[')?;
                idx.write_at(f, 0)?;
                f.write_char(']')
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    a.write_at(f, 0)?;
                }
                f.write_char(')')
            }
            Expr::Not(e) => {
                f.write_str("not ")?;
                e.write_at(f, PREC_NOT)
            }
            Expr::Neg(e) => {
                f.write_char('-')?;
                e.write_at(f, PREC_NEG)
            }
            Expr::Bin(op, l, r) => {
                let p = op.prec();
                let lmin = if op.is_comparison() { p + 1 } else { p };
                l.write_at(f, lmin)?;
                write!(f, " {} ", op.symbol())?;
                r.write_at(f, p + 1)
            }
            Expr::Quant(q, var, list, body) => {
                let kw = match q {
                    Quantifier::Any => "any",
                    Quantifier::All => "all",
                };
                write!(f, "{kw} {var} in ")?;
                list.write_at(f, 5)?;
                f.write_str(": ")?;
                body.write_at(f, 0)
            }
        }
    }

    /// Visits every node, pre-order.
    pub fn walk<'e>(&'e self, visit: &mut dyn FnMut(&'e Expr)) {
        visit(self);
        match self {
            Expr::Field(b, _) | Expr::Not(b) | Expr::Neg(b) => b.walk(visit),
            Expr::Index(a, b) | Expr::Bin(_, a, b) | Expr::Quant(_, _, a, b) => {
                a.walk(visit);
                b.walk(visit);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.walk(visit)),
            _ => {}
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_at(f, 0)
    }
}

fn write_num(f: &mut fmt::Formatter<'_>, n: f64) -> fmt::Result {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        write!(f, "{n:.0}")
    } else {
        write!(f, "{n}")
    }
}

fn write_str_lit(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_char('"')?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => f.write_char(c)?,
        }
    }
    f.write_char('"')
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemplatePart {
    Text(String),
    Expr(Expr),
}

/// Message text with `{expr}` placeholders; `{{` and `}}` are literal braces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Template {
    pub parts: Vec<TemplatePart>,
}

impl Template {
    /// Merges adjacent text and drops empty text.
    pub fn new(parts: Vec<TemplatePart>) -> Self {
        let mut out: Vec<TemplatePart> = Vec::new();
        for p in parts {
            match (p, out.last_mut()) {
                (TemplatePart::Text(t), _) if t.is_empty() => {}
                (TemplatePart::Text(t), Some(TemplatePart::Text(prev))) => prev.push_str(&t),
                (p, _) => out.push(p),
            }
        }
        Template { parts: out }
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &Expr> {
        self.parts.iter().filter_map(|p| match p {
            TemplatePart::Expr(e) => Some(e),
            TemplatePart::Text(_) => None,
        })
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut body = String::new();
        for p in &self.parts {
            match p {
                TemplatePart::Text(t) => body.push_str(&t.replace('{', "{{").replace('}', "}}")),
                TemplatePart::Expr(e) => write!(body, "{{{e}}}")?,
            }
        }
        write_str_lit(f, &body)
    }
}

/// `None` matches every action kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matcher(pub Option<Vec<String>>);

impl Matcher {
    pub fn matches(&self, kind: &str) -> bool {
        self.0.as_ref().is_none_or(|ks| ks.iter().any(|k| k == kind))
    }
}

impl fmt::Display for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            None => f.write_char('*'),
            Some(ks) => f.write_str(&ks.join("|")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleAst {
    pub matcher: Matcher,
    pub condition: Expr,
    pub block: Template,
    pub suggest: Template,
}

impl fmt::Display for RuleAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "when {}: if {} then block {} suggest {}", self.matcher, self.condition, self.block, self.suggest)
    }
}
