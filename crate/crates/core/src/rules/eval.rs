//! Three-valued evaluation. JSON `null` doubles as *unknown*: a missing field,
//! an out-of-range index or a type mismatch all evaluate to it, and it
//! propagates through comparisons and arithmetic.

use std::borrow::Cow;

use serde_json::{Number, Value};

use super::ast::{BinOp, Expr, Func, Quantifier, Template, TemplatePart};

static NULL: Value = Value::Null;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tri {
    True,
    False,
    Unknown,
}

impl Tri {
    pub fn of(v: &Value) -> Tri {
        match v {
            Value::Bool(true) => Tri::True,
            Value::Bool(false) => Tri::False,
            _ => Tri::Unknown,
        }
    }

    fn value(self) -> Value {
        match self {
            Tri::True => Value::Bool(true),
            Tri::False => Value::Bool(false),
            Tri::Unknown => Value::Null,
        }
    }
}

pub(crate) struct Ctx<'a> {
    pub action: &'a Value,
    pub scene: &'a Value,
    pub obs: &'a Value,
}

/// Bindings that made an `any` quantifier true, innermost last.
pub(crate) type Witnesses = Vec<(String, Value)>;

type Vars<'e, 'a> = Vec<(&'e str, Cow<'a, Value>)>;

pub(crate) fn eval_condition(e: &Expr, ctx: &Ctx<'_>) -> (Tri, Witnesses) {
    let mut vars = Vec::new();
    let mut wit = Vec::new();
    let v = eval(e, ctx, &mut vars, &mut wit);
    let t = Tri::of(&v);
    if t != Tri::True {
        wit.clear();
    }
    (t, wit)
}

pub(crate) fn render(t: &Template, ctx: &Ctx<'_>, wit: &Witnesses) -> String {
    let mut vars: Vars<'_, '_> = wit.iter().map(|(k, v)| (k.as_str(), Cow::Borrowed(v))).collect();
    let mut scratch = Vec::new();
    let mut out = String::new();
    for p in &t.parts {
        match p {
            TemplatePart::Text(s) => out.push_str(s),
            TemplatePart::Expr(e) => out.push_str(&display(&eval(e, ctx, &mut vars, &mut scratch))),
        }
    }
    out
}

pub(crate) fn display(v: &Value) -> String {
    match v {
        Value::Null => "?".into(),
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(x) if x.fract() == 0.0 && x.abs() < 1e15 => format!("{x:.0}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

fn num(x: f64) -> Cow<'static, Value> {
    Cow::Owned(Number::from_f64(x).map_or(Value::Null, Value::Number))
}

fn null<'a>() -> Cow<'a, Value> {
    Cow::Borrowed(&NULL)
}

fn field<'a>(v: Cow<'a, Value>, name: &str) -> Cow<'a, Value> {
    match v {
        Cow::Borrowed(b) => b.get(name).map_or_else(null, Cow::Borrowed),
        Cow::Owned(o) => o.get(name).map_or_else(null, |x| Cow::Owned(x.clone())),
    }
}

fn index<'a>(v: Cow<'a, Value>, idx: &Value) -> Cow<'a, Value> {
    fn pick<'v>(v: &'v Value, idx: &Value) -> Option<&'v Value> {
        match (v, idx) {
            (Value::Array(items), Value::Number(n)) => {
                let f = n.as_f64()?;
                if f < 0.0 || f.fract() != 0.0 {
                    return None;
                }
                items.get(f as usize)
            }
            (Value::Object(m), Value::String(k)) => m.get(k),
            _ => None,
        }
    }
    match v {
        Cow::Borrowed(b) => pick(b, idx).map_or_else(null, Cow::Borrowed),
        Cow::Owned(o) => pick(&o, idx).map_or_else(null, |x| Cow::Owned(x.clone())),
    }
}

/// Structural equality with numbers compared by value.
pub(crate) fn json_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| json_eq(p, q)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| json_eq(v, w)))
        }
        _ => a == b,
    }
}

fn compare(op: BinOp, a: &Value, b: &Value) -> Tri {
    use std::cmp::Ordering;
    if a.is_null() || b.is_null() {
        return Tri::Unknown;
    }
    let ord = match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64().zip(y.as_f64()).and_then(|(x, y)| x.partial_cmp(&y)),
        (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
        _ => None,
    };
    let t = |b: bool| if b { Tri::True } else { Tri::False };
    match op {
        BinOp::Eq => t(json_eq(a, b)),
        BinOp::Ne => t(!json_eq(a, b)),
        _ => match ord {
            None => Tri::Unknown,
            Some(o) => t(match op {
                BinOp::Lt => o == Ordering::Less,
                BinOp::Le => o != Ordering::Greater,
                BinOp::Gt => o == Ordering::Greater,
                _ => o != Ordering::Less,
            }),
        },
    }
}

fn eval<'e, 'a>(e: &'e Expr, ctx: &Ctx<'a>, vars: &mut Vars<'e, 'a>, wit: &mut Witnesses) -> Cow<'a, Value> {
    let mark = wit.len();
    let v = eval_inner(e, ctx, vars, wit);
    if !matches!(*v, Value::Bool(true)) {
        wit.truncate(mark);
    }
    v
}

fn truth<'e, 'a>(e: &'e Expr, ctx: &Ctx<'a>, vars: &mut Vars<'e, 'a>, wit: &mut Witnesses) -> Tri {
    Tri::of(&eval(e, ctx, vars, wit))
}

fn eval_inner<'e, 'a>(e: &'e Expr, ctx: &Ctx<'a>, vars: &mut Vars<'e, 'a>, wit: &mut Witnesses) -> Cow<'a, Value> {
    match e {
        Expr::Null => null(),
        Expr::Bool(b) => Cow::Owned(Value::Bool(*b)),
        Expr::Num(n) => num(*n),
        Expr::Str(s) => Cow::Owned(Value::String(s.clone())),
        Expr::Var(name) => {
            if let Some((_, v)) = vars.iter().rev().find(|(k, _)| k == name) {
                return v.clone();
            }
            match name.as_str() {
                "action" => Cow::Borrowed(ctx.action),
                "scene" => Cow::Borrowed(ctx.scene),
                "obs" => Cow::Borrowed(ctx.obs),
                _ => null(),
            }
        }
        Expr::Field(base, name) => field(eval(base, ctx, vars, wit), name),
        Expr::Index(base, idx) => {
            let b = eval(base, ctx, vars, wit);
            let i = eval(idx, ctx, vars, wit);
            index(b, &i)
        }
        Expr::Not(x) => Cow::Owned(
            match truth(x, ctx, vars, wit) {
                Tri::True => Tri::False,
                Tri::False => Tri::True,
                Tri::Unknown => Tri::Unknown,
            }
            .value(),
        ),
        Expr::Neg(x) => match eval(x, ctx, vars, wit).as_f64() {
            Some(n) => num(-n),
            None => null(),
        },
        Expr::Bin(BinOp::And, l, r) => {
            let a = truth(l, ctx, vars, wit);
            if a == Tri::False {
                return Cow::Owned(Value::Bool(false));
            }
            let b = truth(r, ctx, vars, wit);
            Cow::Owned(
                match (a, b) {
                    (_, Tri::False) => Tri::False,
                    (Tri::True, Tri::True) => Tri::True,
                    _ => Tri::Unknown,
                }
                .value(),
            )
        }
        Expr::Bin(BinOp::Or, l, r) => {
            let a = truth(l, ctx, vars, wit);
            if a == Tri::True {
                return Cow::Owned(Value::Bool(true));
            }
            let b = truth(r, ctx, vars, wit);
            Cow::Owned(
                match (a, b) {
                    (_, Tri::True) => Tri::True,
                    (Tri::False, Tri::False) => Tri::False,
                    _ => Tri::Unknown,
                }
                .value(),
            )
        }
        Expr::Bin(op, l, r) => {
            let a = eval(l, ctx, vars, wit);
            let b = eval(r, ctx, vars, wit);
            if op.is_comparison() {
                return Cow::Owned(compare(*op, &a, &b).value());
            }
            match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => num(match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    _ => x * y,
                }),
                _ => null(),
            }
        }
        Expr::Call(func, args) => call(*func, args, ctx, vars, wit),
        Expr::Quant(q, var, list, body) => {
            let items: Vec<Cow<'a, Value>> = match eval(list, ctx, vars, wit) {
                Cow::Borrowed(Value::Array(xs)) => xs.iter().map(Cow::Borrowed).collect(),
                Cow::Owned(Value::Array(xs)) => xs.into_iter().map(Cow::Owned).collect(),
                _ => return null(),
            };
            let mut unknown = false;
            for item in items {
                vars.push((var.as_str(), item));
                let mark = wit.len();
                let t = truth(body, ctx, vars, wit);
                let (_, item) = vars.pop().expect("pushed above");
                match (q, t) {
                    (Quantifier::Any, Tri::True) => {
                        wit.insert(mark, (var.clone(), item.into_owned()));
                        return Cow::Owned(Value::Bool(true));
                    }
                    (Quantifier::All, Tri::False) => return Cow::Owned(Value::Bool(false)),
                    (_, Tri::Unknown) => unknown = true,
                    _ => {}
                }
            }
            if unknown {
                null()
            } else {
                Cow::Owned(Value::Bool(*q == Quantifier::All))
            }
        }
    }
}

fn call<'e, 'a>(
    func: Func,
    args: &'e [Expr],
    ctx: &Ctx<'a>,
    vars: &mut Vars<'e, 'a>,
    wit: &mut Witnesses,
) -> Cow<'a, Value> {
    let mut vals: Vec<Cow<'a, Value>> = args.iter().map(|a| eval(a, ctx, vars, wit)).collect();
    let bool_ = |b: bool| Cow::Owned(Value::Bool(b));
    match func {
        Func::Exists => bool_(!vals[0].is_null()),
        Func::Len => match &*vals[0] {
            Value::Array(a) => num(a.len() as f64),
            Value::Object(m) => num(m.len() as f64),
            Value::String(s) => num(s.chars().count() as f64),
            _ => null(),
        },
        Func::Equals => Cow::Owned(compare(BinOp::Eq, &vals[0], &vals[1]).value()),
        Func::StartsWith => match (&*vals[0], &*vals[1]) {
            (Value::String(a), Value::String(b)) => bool_(a.starts_with(b.as_str())),
            _ => null(),
        },
        Func::Contains => match (&*vals[0], &*vals[1]) {
            (_, Value::Null) => null(),
            (Value::String(a), Value::String(b)) => bool_(a.contains(b.as_str())),
            (Value::Array(xs), needle) => bool_(xs.iter().any(|x| json_eq(x, needle))),
            _ => null(),
        },
        Func::Get => {
            let default = vals.pop().expect("arity 3");
            let key = vals.pop().expect("arity 3");
            let obj = vals.pop().expect("arity 3");
            match (&*obj, &*key) {
                (Value::Object(_), Value::String(_)) | (Value::Array(_), Value::Number(_)) => {
                    let v = index(obj, &key);
                    if v.is_null() {
                        default
                    } else {
                        v
                    }
                }
                _ => null(),
            }
        }
        Func::RecipeFor => {
            let Value::String(item) = &*vals[0] else { return null() };
            match ctx.scene.get("recipes") {
                Some(Value::Array(rs)) => rs
                    .iter()
                    .find(|r| r.pointer("/output/item").and_then(Value::as_str) == Some(item.as_str()))
                    .map_or_else(null, Cow::Borrowed),
                _ => null(),
            }
        }
    }
}
