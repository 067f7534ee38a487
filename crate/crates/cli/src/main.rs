//! `treeshift`: validate tree specs, compute norms, decide hypercyclicity,
//! print decay reports, build shadowing witnesses and check the unitary
//! equivalence of `S*` and `B`.
//!
//! Exit codes: 0 success, 1 domain failure (or invalid tree for
//! `validate`), 2 input failure, 3 window exhausted.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use treeshift::documents::{weights_from_json, TreeSpec};
use treeshift::dynamics::{
    decay_report, decide_backward, decide_forward, default_probes, Quantity, DEFAULT_N_MAX, DEFAULT_PROBE_DEPTH,
};
use treeshift::operators::{backward_bound, check_unitary_equivalence, shift_norm, Exactness, OperatorKind};
use treeshift::oracle::{estimate_norm_p2, lower_bound_norm_p, truncate_operator};
use treeshift::shadowing::{build_shadow_vector, plan_schedule};
use treeshift::space::{conjugate, random_tree_function, shallow_vertices};
use treeshift::{Error, TreeFunction, TreeModel, VertexAddress, WeightMap, Window};

const WINDOW_LIMIT_VAR: &str = "TREESHIFT_WINDOW_LIMIT";
/// Largest truncation the dense oracle will assemble.
const DENSE_LIMIT: usize = 16_384;

#[derive(Parser, Debug)]
#[command(name = "treeshift", version, about = "Shift operators on weighted Lp spaces of directed trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Tree spec document (JSON).
    #[arg(long, global = true)]
    tree: Option<PathBuf>,
    /// Weight spec document (JSON); unit weights when omitted.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Exponent of the space the forward shift acts on.
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Exponent of the space the backward shift acts on; defaults to p/(p-1).
    #[arg(long, global = true)]
    q: Option<f64>,
    /// Extra probe vertices, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    probes: Vec<VertexAddress>,
    /// Largest n in the decay grid 1..=nmax.
    #[arg(long, global = true, default_value_t = DEFAULT_N_MAX)]
    nmax: u32,
    /// Shadowing tolerance.
    #[arg(long, global = true, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Operator {
    Forward,
    Backward,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the tree axioms of a spec.
    Validate,
    /// Closed-form norms of S and B next to dense oracle estimates.
    Norms {
        /// Depth of the oracle truncation window (both directions).
        #[arg(long, default_value_t = 12)]
        oracle_depth: u32,
        /// Random trials for the p ≠ 2 lower bound.
        #[arg(long, default_value_t = 32)]
        trials: usize,
    },
    /// Hypercyclicity verdict for S or B.
    Decide {
        #[arg(long, value_enum, default_value_t = Operator::Backward)]
        operator: Operator,
    },
    /// Values of a decay quantity over the probes and the n-grid.
    Decay {
        #[arg(long, default_value_t = Quantity::Omega)]
        quantity: Quantity,
    },
    /// Build a vector whose orbit shadows m random targets.
    Shadow {
        #[arg(long, default_value_t = 4)]
        m: usize,
        /// Targets are supported within this depth.
        #[arg(long, default_value_t = 3)]
        target_depth: u32,
        /// Support size of each target.
        #[arg(long, default_value_t = 3)]
        support: usize,
        /// Also write the full plan as JSON here.
        #[arg(long)]
        plan_out: Option<PathBuf>,
    },
    /// Residuals of S*Φ = ΦB on random functions.
    Equiv {
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Domain(String),
    Input(String),
    Window(String),
    /// Already reported on the output channel.
    Invalid,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_window_failure() {
            Failure::Window(e.to_string())
        } else if e.is_input_failure() {
            Failure::Input(e.to_string())
        } else {
            Failure::Domain(e.to_string())
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Domain(_) | Failure::Invalid => 1,
            Failure::Input(_) => 2,
            Failure::Window(_) => 3,
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))
}

fn number(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!("∞")
    }
}

fn text(x: f64) -> String {
    if !x.is_finite() {
        "∞".to_string()
    } else if x != 0.0 && x.abs() < 1e-4 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

struct Context {
    cli: Cli,
    limit: Option<usize>,
}

impl Context {
    fn spec(&self) -> Outcome<TreeSpec> {
        let path = self.cli.tree.as_deref().ok_or_else(|| Failure::Input("--tree is required".into()))?;
        Ok(TreeSpec::from_json(&read(path)?)?)
    }

    fn model(&self) -> Outcome<TreeModel> {
        let model = self.spec()?.build()?;
        Ok(match self.limit {
            Some(limit) => model.with_vertex_limit(limit),
            None => model,
        })
    }

    fn weights(&self) -> Outcome<WeightMap> {
        match &self.cli.weights {
            Some(path) => Ok(weights_from_json(&read(path)?)?),
            None => Ok(WeightMap::Unit),
        }
    }

    fn p(&self) -> f64 {
        self.cli.p.unwrap_or(2.0)
    }

    /// `--q`, else the conjugate of `--p`, else 2.
    fn q(&self) -> Outcome<f64> {
        match (self.cli.q, self.cli.p) {
            (Some(q), _) => Ok(q),
            (None, Some(p)) => Ok(conjugate(p)?),
            (None, None) => Ok(2.0),
        }
    }

    fn emit(&self, body: &str) -> Outcome<()> {
        match &self.cli.out {
            Some(path) => {
                fs::write(path, body).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
            }
            None => {
                print!("{body}");
                Ok(())
            }
        }
    }
}

fn oracle_estimate(
    kind: OperatorKind,
    weights: &WeightMap,
    model: &TreeModel,
    r: f64,
    depth: u32,
    trials: usize,
    seed: u64,
) -> Outcome<(f64, &'static str)> {
    let outer = model.window();
    let window = Window { up: outer.up.min(depth), down: outer.down.min(depth) };
    let dense = model.clone().with_vertex_limit(model.vertex_limit().min(DENSE_LIMIT));
    let op = truncate_operator(kind, weights, &dense, window)?;
    if r == 2.0 {
        Ok((estimate_norm_p2(&op)?.value, "singular_value"))
    } else {
        Ok((lower_bound_norm_p(&op, r, trials, seed)?, "lower_bound"))
    }
}

fn cmd_validate(ctx: &Context) -> Outcome<()> {
    let report = ctx.spec()?.validate();
    let valid = report.is_valid();
    ctx.emit(&pretty(&json!({ "valid": valid, "violations": report.violations })))?;
    if valid {
        Ok(())
    } else {
        Err(Failure::Invalid)
    }
}

fn cmd_norms(ctx: &Context, oracle_depth: u32, trials: usize) -> Outcome<()> {
    let model = ctx.model()?;
    let weights = ctx.weights()?;
    let p = ctx.p();
    let q = match (ctx.cli.q, p) {
        (Some(q), _) => Some(q),
        (None, p) if p > 1.0 => Some(conjugate(p)?),
        _ => None,
    };
    let exact = |e: Exactness| match e {
        Exactness::Exact => "exact",
        Exactness::WindowLimited => "window_limited",
    };
    let mut rows = Vec::new();
    let s = shift_norm(&weights, p, &model)?;
    let (so, sk) =
        oracle_estimate(OperatorKind::ForwardShift, &weights, &model, p, oracle_depth, trials, ctx.cli.seed)?;
    rows.push(("S", p, s.value, exact(s.exactness), so, sk));
    if let Some(q) = q {
        let b = backward_bound(&weights, q, &model)?;
        let (bo, bk) =
            oracle_estimate(OperatorKind::BackwardShift, &weights, &model, q, oracle_depth, trials, ctx.cli.seed)?;
        rows.push(("B", q, b.value.powf(1.0 / q), exact(b.exactness), bo, bk));
    }
    let body = match ctx.cli.format {
        Format::Csv => {
            let mut out = String::from("operator,exponent,closed_form,exactness,oracle,oracle_kind,delta\n");
            for (op, r, c, e, o, k) in &rows {
                out.push_str(&format!("{op},{r},{},{e},{},{k},{}\n", text(*c), text(*o), text(c - o)));
            }
            out
        }
        Format::Json => pretty(
            &rows
                .iter()
                .map(|(op, r, c, e, o, k)| {
                    json!({
                        "operator": op, "exponent": r, "closed_form": number(*c), "exactness": e,
                        "oracle": o, "oracle_kind": k, "delta": number(c - o),
                    })
                })
                .collect::<Vec<_>>(),
        ),
    };
    ctx.emit(&body)
}

fn cmd_decide(ctx: &Context, operator: Operator) -> Outcome<()> {
    let model = ctx.model()?;
    let verdict = match operator {
        Operator::Forward => decide_forward(&model)?,
        Operator::Backward => decide_backward(&model, &ctx.weights()?, ctx.q()?, &ctx.cli.probes, ctx.cli.nmax)?,
    };
    let body = match ctx.cli.format {
        Format::Csv => format!(
            "outcome,witness,evidence_graded\n{},{},{}\n",
            verdict.outcome,
            verdict.witness.as_ref().map(|w| w.to_string()).unwrap_or_default(),
            verdict.evidence_graded
        ),
        Format::Json => pretty(&verdict),
    };
    ctx.emit(&body)
}

fn cmd_decay(ctx: &Context, quantity: Quantity) -> Outcome<()> {
    let model = ctx.model()?;
    let probes = default_probes(&model, DEFAULT_PROBE_DEPTH, &ctx.cli.probes)?;
    if ctx.cli.nmax == 0 {
        return Err(Failure::Input("--nmax must be at least 1".into()));
    }
    let grid: Vec<u32> = (1..=ctx.cli.nmax).collect();
    let report = decay_report(quantity, &probes, &grid, &ctx.weights()?, ctx.q()?, &model)?;
    let body = match ctx.cli.format {
        Format::Csv => {
            let mut out = String::from("vertex,n,value\n");
            for row in report.csv_rows() {
                out.push_str(&row);
                out.push('\n');
            }
            out
        }
        Format::Json => pretty(&report),
    };
    ctx.emit(&body)
}

fn cmd_shadow(ctx: &Context, m: usize, target_depth: u32, support: usize, plan_out: Option<&Path>) -> Outcome<()> {
    let model = ctx.model()?;
    if m == 0 {
        return Err(Failure::Input("--m must be at least 1".into()));
    }
    let pool = shallow_vertices(&model, target_depth)?.len();
    let targets = (0..m as u64)
        .map(|k| random_tree_function(&model, target_depth, support.min(pool), ctx.cli.seed.wrapping_add(k)))
        .collect::<treeshift::Result<Vec<TreeFunction>>>()?;
    let mut plan = plan_schedule(&targets, &ctx.weights()?, ctx.q()?, ctx.cli.eps, &model)?;
    build_shadow_vector(&mut plan, &model)?;
    if let Some(path) = plan_out {
        fs::write(path, pretty(&plan)).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    let body = match ctx.cli.format {
        Format::Csv => {
            let mut out = String::from("k,n_k,error\n");
            for row in plan.csv_rows() {
                out.push_str(&row);
                out.push('\n');
            }
            out
        }
        Format::Json => pretty(&plan),
    };
    ctx.emit(&body)
}

fn cmd_equiv(ctx: &Context, samples: usize) -> Outcome<()> {
    let model = ctx.model()?;
    let weights = ctx.weights()?;
    let q = ctx.q()?;
    if samples == 0 {
        return Err(Failure::Input("--samples must be at least 1".into()));
    }
    let pool = shallow_vertices(&model, 3)?.len();
    let mut worst = 0.0f64;
    for i in 0..samples as u64 {
        let f = random_tree_function(&model, 3, pool.min(8), ctx.cli.seed.wrapping_add(i))?;
        worst = worst.max(check_unitary_equivalence(&f, &weights, q, &model)?);
    }
    let body = match ctx.cli.format {
        Format::Csv => format!("samples,q,max_residual\n{samples},{q},{worst:e}\n"),
        Format::Json => pretty(&json!({ "samples": samples, "q": q, "max_residual": worst })),
    };
    ctx.emit(&body)
}

fn run(cli: Cli) -> Outcome<()> {
    let limit = match std::env::var(WINDOW_LIMIT_VAR) {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|e| Failure::Input(format!("{WINDOW_LIMIT_VAR}={v:?}: {e}")))?),
        Err(_) => None,
    };
    let ctx = Context { cli, limit };
    match &ctx.cli.command {
        Command::Validate => cmd_validate(&ctx),
        Command::Norms { oracle_depth, trials } => cmd_norms(&ctx, *oracle_depth, *trials),
        Command::Decide { operator } => cmd_decide(&ctx, *operator),
        Command::Decay { quantity } => cmd_decay(&ctx, *quantity),
        Command::Shadow { m, target_depth, support, plan_out } => {
            cmd_shadow(&ctx, *m, *target_depth, *support, plan_out.as_deref())
        }
        Command::Equiv { samples } => cmd_equiv(&ctx, *samples),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Domain(m) | Failure::Input(m) | Failure::Window(m) => eprintln!("error: {m}"),
                Failure::Invalid => {}
            }
            ExitCode::from(f.code())
        }
    }
}
