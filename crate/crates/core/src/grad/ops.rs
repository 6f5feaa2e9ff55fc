use super::{GradError, Node, Op, Payload, Result, Tape, Value};

#[inline]
fn at(xs: &[f64], k: usize) -> f64 {
    if xs.len() == 1 {
        xs[0]
    } else {
        xs[k]
    }
}

#[inline]
fn acc(dst: &mut [f64], k: usize, v: f64) {
    if dst.len() == 1 {
        dst[0] += v;
    } else {
        dst[k] += v;
    }
}

fn wrap(xs: Vec<f64>, like_vector: bool) -> Payload {
    if like_vector {
        Payload::Vector(xs)
    } else {
        Payload::Scalar(xs[0])
    }
}

fn finite(op: &'static str, p: Payload) -> Result<Payload> {
    if p.is_finite() {
        Ok(p)
    } else {
        Err(GradError::Domain {
            op,
            detail: "result is not finite".into(),
        })
    }
}

impl Tape {
    fn binary(
        &mut self,
        op: &'static str,
        a: Value,
        b: Value,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Value, Value) -> Op,
    ) -> Result<Value> {
        let (pa, pb) = (self.check(a)?, self.check(b)?);
        let (la, lb) = (pa.len(), pb.len());
        if la != lb && la != 1 && lb != 1 {
            return Err(GradError::Shape {
                op,
                left: la,
                right: lb,
            });
        }
        let n = la.max(lb);
        let vector = matches!(pa, Payload::Vector(_)) || matches!(pb, Payload::Vector(_));
        let (xa, xb) = (pa.as_slice(), pb.as_slice());
        let out: Vec<f64> = (0..n).map(|k| f(at(xa, k), at(xb, k))).collect();
        let payload = finite(op, wrap(out, vector))?;
        Ok(self.push(payload, make(a, b)))
    }

    fn unary(
        &mut self,
        op: &'static str,
        a: Value,
        f: impl Fn(f64) -> f64,
        record: Op,
    ) -> Result<Value> {
        let pa = self.check(a)?;
        let out = match pa {
            Payload::Scalar(x) => Payload::Scalar(f(*x)),
            Payload::Vector(xs) => Payload::Vector(xs.iter().map(|&x| f(x)).collect()),
        };
        let payload = finite(op, out)?;
        Ok(self.push(payload, record))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Value, b: Value) -> Result<Value> {
        if self.check(b)?.as_slice().contains(&0.0) {
            return Err(GradError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn neg(&mut self, a: Value) -> Result<Value> {
        self.unary("neg", a, |x| -x, Op::Neg(a))
    }

    /// Multiply by a constant that does not live on the tape.
    pub fn scale(&mut self, a: Value, c: f64) -> Result<Value> {
        self.unary("scale", a, |x| c * x, Op::Scale(a, c))
    }

    /// Add a constant that does not live on the tape.
    pub fn shift(&mut self, a: Value, c: f64) -> Result<Value> {
        self.unary("shift", a, |x| x + c, Op::Shift(a))
    }

    /// Divide by a nonzero constant that does not live on the tape.
    pub fn div_const(&mut self, a: Value, c: f64) -> Result<Value> {
        if c == 0.0 {
            return Err(GradError::Domain {
                op: "div_const",
                detail: "division by zero".into(),
            });
        }
        self.unary("div_const", a, |x| x / c, Op::DivConst(a, c))
    }

    pub fn exp(&mut self, a: Value) -> Result<Value> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Value) -> Result<Value> {
        if self.check(a)?.as_slice().iter().any(|&x| x <= 0.0) {
            return Err(GradError::Domain {
                op: "log",
                detail: "argument must be positive".into(),
            });
        }
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Value) -> Result<Value> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Value) -> Result<Value> {
        self.unary("sigmoid", a, stable_sigmoid, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Value) -> Result<Value> {
        self.unary("abs", a, f64::abs, Op::Abs(a))
    }

    pub fn relu(&mut self, a: Value) -> Result<Value> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `a^c` for a constant exponent. Non-integer exponents need `a >= 0`,
    /// exponents below one need `a > 0`.
    pub fn pow(&mut self, a: Value, c: f64) -> Result<Value> {
        if !c.is_finite() {
            return Err(GradError::Domain {
                op: "pow",
                detail: "exponent must be finite".into(),
            });
        }
        let xs = self.check(a)?.as_slice();
        let integral = c.fract() == 0.0;
        if xs
            .iter()
            .any(|&x| (!integral && x < 0.0) || (c < 1.0 && x == 0.0))
        {
            return Err(GradError::Domain {
                op: "pow",
                detail: format!("base outside the domain of exponent {c}"),
            });
        }
        self.unary("pow", a, |x| x.powf(c), Op::Pow(a, c))
    }

    /// `max(a, lo)` with zero derivative where the clamp is active.
    pub fn clamp_min(&mut self, a: Value, lo: f64) -> Result<Value> {
        self.unary("clamp_min", a, |x| x.max(lo), Op::ClampMin(a, lo))
    }

    pub fn sum(&mut self, a: Value) -> Result<Value> {
        let s = self.check(a)?.as_slice().iter().sum::<f64>();
        let p = finite("sum", Payload::Scalar(s))?;
        Ok(self.push(p, Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Value) -> Result<Value> {
        let xs = self.check(a)?.as_slice();
        if xs.is_empty() {
            return Err(GradError::Domain {
                op: "mean",
                detail: "empty vector".into(),
            });
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let p = finite("mean", Payload::Scalar(m))?;
        Ok(self.push(p, Op::Mean(a)))
    }

    pub fn dot(&mut self, a: Value, b: Value) -> Result<Value> {
        let (xa, xb) = (self.check(a)?.as_slice(), self.check(b)?.as_slice());
        if xa.len() != xb.len() {
            return Err(GradError::Shape {
                op: "dot",
                left: xa.len(),
                right: xb.len(),
            });
        }
        let d = xa.iter().zip(xb).map(|(x, y)| x * y).sum::<f64>();
        let p = finite("dot", Payload::Scalar(d))?;
        Ok(self.push(p, Op::Dot(a, b)))
    }

    /// Row-major `rows x cols` matrix times a vector of length `cols`.
    pub fn matvec(&mut self, matrix: Value, rows: usize, cols: usize, x: Value) -> Result<Value> {
        let (m, v) = (self.check(matrix)?.as_slice(), self.check(x)?.as_slice());
        if m.len() != rows * cols {
            return Err(GradError::Shape {
                op: "matvec",
                left: m.len(),
                right: rows * cols,
            });
        }
        if v.len() != cols {
            return Err(GradError::Shape {
                op: "matvec",
                left: cols,
                right: v.len(),
            });
        }
        let out: Vec<f64> = m
            .chunks_exact(cols)
            .map(|row| row.iter().zip(v).map(|(w, x)| w * x).sum())
            .collect();
        let p = finite("matvec", Payload::Vector(out))?;
        Ok(self.push(
            p,
            Op::MatVec {
                matrix,
                rows,
                cols,
                x,
            },
        ))
    }

    /// Scalar element `i` of a vector.
    pub fn index(&mut self, a: Value, i: usize) -> Result<Value> {
        let xs = self.check(a)?.as_slice();
        let x = *xs.get(i).ok_or(GradError::Shape {
            op: "index",
            left: xs.len(),
            right: i,
        })?;
        Ok(self.push(Payload::Scalar(x), Op::Index(a, i)))
    }

    /// Concatenate scalar nodes into one vector node.
    pub fn stack(&mut self, items: &[Value]) -> Result<Value> {
        let mut out = Vec::with_capacity(items.len());
        for &v in items {
            match self.check(v)? {
                Payload::Scalar(x) => out.push(*x),
                Payload::Vector(xs) => {
                    return Err(GradError::Shape {
                        op: "stack",
                        left: 1,
                        right: xs.len(),
                    })
                }
            }
        }
        Ok(self.push(Payload::Vector(out), Op::Stack(items.to_vec())))
    }
}

/// Logistic function evaluated without overflow for large `|x|`.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Push the adjoint `g` of `node` into its parents. `lower` is the adjoint
/// buffer for every node created before `node`.
pub(super) fn propagate(
    tape: &Tape,
    node: &Node,
    g: &[f64],
    lower: &mut [f64],
    touched: &mut [bool],
) {
    let slot = |v: Value| {
        let n = &tape.nodes[v.0];
        n.offset..n.offset + n.payload.len()
    };
    let val = |v: Value| tape.nodes[v.0].payload.as_slice();
    let out = node.payload.as_slice();

    match &node.op {
        Op::Leaf { .. } => {}
        Op::Add(a, b) => {
            for (k, &gk) in g.iter().enumerate() {
                acc(&mut lower[slot(*a)], k, gk);
                acc(&mut lower[slot(*b)], k, gk);
            }
            touched[a.0] = true;
            touched[b.0] = true;
        }
        Op::Sub(a, b) => {
            for (k, &gk) in g.iter().enumerate() {
                acc(&mut lower[slot(*a)], k, gk);
                acc(&mut lower[slot(*b)], k, -gk);
            }
            touched[a.0] = true;
            touched[b.0] = true;
        }
        Op::Mul(a, b) => {
            let (xa, xb) = (val(*a), val(*b));
            for (k, &gk) in g.iter().enumerate() {
                acc(&mut lower[slot(*a)], k, gk * at(xb, k));
                acc(&mut lower[slot(*b)], k, gk * at(xa, k));
            }
            touched[a.0] = true;
            touched[b.0] = true;
        }
        Op::Div(a, b) => {
            let (xa, xb) = (val(*a), val(*b));
            for (k, &gk) in g.iter().enumerate() {
                let d = at(xb, k);
                acc(&mut lower[slot(*a)], k, gk / d);
                acc(&mut lower[slot(*b)], k, -gk * at(xa, k) / (d * d));
            }
            touched[a.0] = true;
            touched[b.0] = true;
        }
        Op::Neg(a) => elementwise(lower, slot(*a), g, |_, gk| -gk, touched, *a),
        Op::Scale(a, c) => elementwise(lower, slot(*a), g, |_, gk| c * gk, touched, *a),
        Op::Shift(a) => elementwise(lower, slot(*a), g, |_, gk| gk, touched, *a),
        Op::DivConst(a, c) => elementwise(lower, slot(*a), g, |_, gk| gk / c, touched, *a),
        Op::Exp(a) => elementwise(lower, slot(*a), g, |k, gk| gk * out[k], touched, *a),
        Op::Log(a) => {
            let x = val(*a);
            elementwise(lower, slot(*a), g, |k, gk| gk / x[k], touched, *a)
        }
        Op::Tanh(a) => elementwise(
            lower,
            slot(*a),
            g,
            |k, gk| gk * (1.0 - out[k] * out[k]),
            touched,
            *a,
        ),
        Op::Sigmoid(a) => elementwise(
            lower,
            slot(*a),
            g,
            |k, gk| gk * out[k] * (1.0 - out[k]),
            touched,
            *a,
        ),
        Op::Abs(a) => {
            let x = val(*a);
            elementwise(
                lower,
                slot(*a),
                g,
                |k, gk| {
                    if x[k] > 0.0 {
                        gk
                    } else if x[k] < 0.0 {
                        -gk
                    } else {
                        0.0
                    }
                },
                touched,
                *a,
            )
        }
        Op::Relu(a) => {
            let x = val(*a);
            elementwise(
                lower,
                slot(*a),
                g,
                |k, gk| if x[k] > 0.0 { gk } else { 0.0 },
                touched,
                *a,
            )
        }
        Op::Pow(a, c) => {
            let x = val(*a);
            elementwise(
                lower,
                slot(*a),
                g,
                |k, gk| {
                    if *c == 1.0 {
                        gk
                    } else if x[k] == 0.0 {
                        0.0
                    } else {
                        gk * c * x[k].powf(c - 1.0)
                    }
                },
                touched,
                *a,
            )
        }
        Op::ClampMin(a, lo) => {
            let x = val(*a);
            elementwise(
                lower,
                slot(*a),
                g,
                |k, gk| if x[k] >= *lo { gk } else { 0.0 },
                touched,
                *a,
            )
        }
        Op::Sum(a) => {
            for d in &mut lower[slot(*a)] {
                *d += g[0];
            }
            touched[a.0] = true;
        }
        Op::Mean(a) => {
            let r = slot(*a);
            let n = r.len() as f64;
            for d in &mut lower[r] {
                *d += g[0] / n;
            }
            touched[a.0] = true;
        }
        Op::Dot(a, b) => {
            let (xa, xb) = (val(*a), val(*b));
            let (ra, rb) = (slot(*a), slot(*b));
            for k in 0..xa.len() {
                lower[ra.start + k] += g[0] * xb[k];
                lower[rb.start + k] += g[0] * xa[k];
            }
            touched[a.0] = true;
            touched[b.0] = true;
        }
        Op::MatVec {
            matrix,
            rows,
            cols,
            x,
        } => {
            let (m, v) = (val(*matrix), val(*x));
            let (rm, rx) = (slot(*matrix), slot(*x));
            for i in 0..*rows {
                let gi = g[i];
                for j in 0..*cols {
                    lower[rm.start + i * cols + j] += gi * v[j];
                    lower[rx.start + j] += gi * m[i * cols + j];
                }
            }
            touched[matrix.0] = true;
            touched[x.0] = true;
        }
        Op::Index(a, i) => {
            lower[slot(*a).start + i] += g[0];
            touched[a.0] = true;
        }
        Op::Stack(items) => {
            for (k, v) in items.iter().enumerate() {
                lower[slot(*v).start] += g[k];
                touched[v.0] = true;
            }
        }
    }
}

fn elementwise(
    lower: &mut [f64],
    range: std::ops::Range<usize>,
    g: &[f64],
    f: impl Fn(usize, f64) -> f64,
    touched: &mut [bool],
    parent: Value,
) {
    for (k, d) in lower[range].iter_mut().enumerate() {
        *d += f(k, g[k]);
    }
    touched[parent.0] = true;
}
