use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rkck::coherent::{CoherentLabel, CoherentStates, FiducialVector};
use rkck::constraint::{build_projector, kernel_rank, ConstrainedKernel, ConstraintProjector};
use rkck::dynamics::{
    commutator_norm, constrained_propagator, product_propagator, select_fiducial_and_shift,
    spectrum_report, Branch, RenormalizedHamiltonian,
};
use rkck::expr::parse_operator;
use rkck::fock::{angular_momentum, canonical_ops, FockSpace, SpaceOptions};
use rkck::oracle::oracle_kernel;
use rkck::product::{
    classify_factors, Classification, FactorKernel, LabelSequence, ProductKernelResult,
    RescaledKernel,
};
use rkck::reduce::{momentum_window, reduce_kernel_delta_limit, ConstraintFamily};
use rkck::{ConstraintKind, ConstraintSet, OperatorMatrix, C64};
use serde::Serialize;

use crate::config::{ConstraintSpec, FiducialSpec, GridSpec, NamedSet, ScenarioConfig};
use crate::output::{num, OutputSet};
use crate::{CliError, Command};

type Pair = (CoherentLabel, CoherentLabel);

/// What the constraint section resolves to.
enum Constraint {
    None,
    Projector(ConstraintProjector),
    /// Compressed momentum window (not a projector after truncation).
    Window(OperatorMatrix),
}

fn build_space(cfg: &ScenarioConfig, cap: Option<usize>) -> Result<FockSpace, CliError> {
    let mut options = SpaceOptions {
        number_cap: cfg.space.number_cap,
        ..SpaceOptions::default()
    };
    if let Some(t) = cfg.space.tail_tolerance {
        options.tail_tolerance = t;
    }
    if let Some(c) = cap {
        options.resource_cap = c;
    }
    Ok(FockSpace::with_options(
        cfg.space.modes,
        cfg.space.cutoff,
        options,
    )?)
}

fn constraint_set(
    cfg: &ScenarioConfig,
    space: &FockSpace,
) -> Result<Option<ConstraintSet>, CliError> {
    let set = match &cfg.constraints {
        ConstraintSpec::Operators {
            operators,
            class,
            delta_squared,
        } => {
            let ops = operators
                .iter()
                .enumerate()
                .map(|(k, text)| {
                    parse_operator(space, text).map_err(|e| {
                        CliError::invalid(&format!("constraints.operators[{k}]"), e.to_string())
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            ConstraintSet::new(ops, (*class).into(), *delta_squared)?
        }
        ConstraintSpec::Named {
            name,
            delta_squared,
        } => {
            let (ops, kind) = match name {
                NamedSet::AngularMomentum => {
                    if space.modes() != 3 {
                        return Err(CliError::invalid(
                            "constraints.name",
                            "angular_momentum needs three modes",
                        ));
                    }
                    (
                        angular_momentum(space)?.to_vec(),
                        ConstraintKind::DiscreteSpectrum,
                    )
                }
                NamedSet::Canonical => {
                    let mut ops = Vec::new();
                    for j in 0..space.modes() {
                        let (p, q) = canonical_ops(space, j)?;
                        ops.push(p);
                        ops.push(q);
                    }
                    (ops, ConstraintKind::SecondClass)
                }
            };
            ConstraintSet::new(ops, kind, *delta_squared)?
        }
        ConstraintSpec::None | ConstraintSpec::MomentumWindow { .. } => return Ok(None),
    };
    Ok(Some(set))
}

fn window_mode(mode: usize, space: &FockSpace) -> Result<usize, CliError> {
    if mode == 0 || mode > space.modes() {
        return Err(CliError::invalid(
            "constraints.mode",
            format!("must be between 1 and {}", space.modes()),
        ));
    }
    Ok(mode - 1)
}

fn build_constraint(cfg: &ScenarioConfig, space: &FockSpace) -> Result<Constraint, CliError> {
    if let ConstraintSpec::MomentumWindow { mode, delta } = &cfg.constraints {
        let mode = window_mode(*mode, space)?;
        let delta = delta.ok_or_else(|| {
            CliError::invalid("constraints.delta", "required unless running `reduce`")
        })?;
        return Ok(Constraint::Window(momentum_window(space, mode, delta)?));
    }
    Ok(match constraint_set(cfg, space)? {
        Some(set) => Constraint::Projector(build_projector(&set)?),
        None => Constraint::None,
    })
}

fn hamiltonian(
    cfg: &ScenarioConfig,
    space: &FockSpace,
    projector: &ConstraintProjector,
) -> Result<Option<RenormalizedHamiltonian>, CliError> {
    let Some(spec) = &cfg.hamiltonian else {
        return Ok(None);
    };
    let h = parse_operator(space, &spec.expression)
        .map_err(|e| CliError::invalid("hamiltonian.expression", e.to_string()))?;
    Ok(Some(select_fiducial_and_shift(
        projector,
        &h,
        spec.branch.into(),
    )?))
}

fn fiducial(
    cfg: &ScenarioConfig,
    space: &FockSpace,
    ren: Option<&RenormalizedHamiltonian>,
) -> Result<FiducialVector, CliError> {
    Ok(match &cfg.fiducial {
        FiducialSpec::Ground => FiducialVector::ground(space),
        FiducialSpec::Fock { occupations } => FiducialVector::fock(space, occupations)?,
        FiducialSpec::Coherent { label } => FiducialVector::coherent(space, &label.to_label()?)?,
        FiducialSpec::Vector { amplitudes } => {
            if amplitudes.len() != space.dim() {
                return Err(CliError::invalid(
                    "fiducial.amplitudes",
                    format!(
                        "expected {} amplitudes, got {}",
                        space.dim(),
                        amplitudes.len()
                    ),
                ));
            }
            FiducialVector::new(nalgebra_dvector(amplitudes))?
        }
        FiducialSpec::Selected => ren
            .ok_or_else(|| CliError::invalid("fiducial", "`selected` needs a hamiltonian"))?
            .fiducial()?,
    })
}

fn nalgebra_dvector(amplitudes: &[[f64; 2]]) -> DVector<C64> {
    DVector::from_iterator(
        amplitudes.len(),
        amplitudes.iter().map(|[re, im]| C64::new(*re, *im)),
    )
}

fn random_label(rng: &mut ChaCha8Rng, modes: usize, radius: f64) -> rkck::Result<CoherentLabel> {
    loop {
        let z: Vec<C64> = (0..modes)
            .map(|_| C64::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)))
            .collect();
        let r2: f64 = z.iter().map(|z| z.norm_sqr()).sum();
        if r2 <= 1.0 {
            let z: Vec<C64> = z.iter().map(|z| z * radius).collect();
            return CoherentLabel::from_z(&z);
        }
    }
}

fn grid_pairs(cfg: &ScenarioConfig, command: Command, seed: u64) -> Result<Vec<Pair>, CliError> {
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| CliError::missing("grid", command))?;
    Ok(match grid {
        GridSpec::Pairs { pairs } => pairs
            .iter()
            .map(|[a, b]| Ok((a.to_label()?, b.to_label()?)))
            .collect::<rkck::Result<_>>()?,
        GridSpec::Labels { labels } => {
            let labels: Vec<CoherentLabel> = labels
                .iter()
                .map(|l| l.to_label())
                .collect::<rkck::Result<_>>()?;
            labels
                .iter()
                .flat_map(|a| labels.iter().map(move |b| (a.clone(), b.clone())))
                .collect()
        }
        GridSpec::Random { count, radius } => {
            if !(radius.is_finite() && *radius >= 0.0) {
                return Err(CliError::invalid(
                    "grid.radius",
                    "must be finite and non-negative",
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let modes = cfg.space.modes;
            (0..*count)
                .map(|_| {
                    Ok((
                        random_label(&mut rng, modes, *radius)?,
                        random_label(&mut rng, modes, *radius)?,
                    ))
                })
                .collect::<rkck::Result<_>>()?
        }
    })
}

fn label_header(modes: usize) -> Vec<String> {
    let mut h = Vec::new();
    for side in ["bra", "ket"] {
        for axis in ["p", "q"] {
            if modes == 1 {
                h.push(format!("{axis}_{side}"));
            } else {
                h.extend((1..=modes).map(|j| format!("{axis}_{side}_{j}")));
            }
        }
    }
    h
}

fn label_cells(pair: &Pair) -> Vec<String> {
    let (a, b) = pair;
    a.p()
        .iter()
        .chain(a.q())
        .chain(b.p())
        .chain(b.q())
        .map(|&x| num(x))
        .collect()
}

fn kernel_table(out: &mut OutputSet, name: &str, modes: usize, pairs: &[Pair], values: &[C64]) {
    let mut header = label_header(modes);
    header.extend(["re".to_string(), "im".to_string()]);
    let rows: Vec<Vec<String>> = pairs
        .iter()
        .zip(values)
        .map(|(pair, v)| {
            let mut row = label_cells(pair);
            row.extend([num(v.re), num(v.im)]);
            row
        })
        .collect();
    out.add_csv(name, &header, &rows);
}

fn classification_name(c: Classification) -> &'static str {
    match c {
        Classification::Convergent => "convergent",
        Classification::DivergesToZero => "diverges_to_zero",
        Classification::Divergent => "divergent",
        Classification::VanishingFactor => "vanishing_factor",
    }
}

#[derive(Serialize)]
struct ProductReport {
    classification: &'static str,
    n_max: usize,
    cauchy_verified: bool,
    cauchy_defect: f64,
    product_cauchy_defect: f64,
    decay_exponent: Option<f64>,
    log_modulus_exponent: Option<f64>,
    tail_estimate: Option<f64>,
    limit: Option<[f64; 2]>,
    last_partial_product: [f64; 2],
    s_bar: f64,
}

impl ProductReport {
    fn new(r: &ProductKernelResult) -> Self {
        let last = *r.partial_products.last().expect("non-empty schedule");
        Self {
            classification: classification_name(r.classification),
            n_max: *r.schedule.last().expect("non-empty schedule"),
            cauchy_verified: r.cauchy_verified,
            cauchy_defect: r.cauchy_defect,
            product_cauchy_defect: r.product_cauchy_defect,
            decay_exponent: r.decay_exponent,
            log_modulus_exponent: r.log_modulus_exponent,
            tail_estimate: r.tail_estimate,
            limit: r.limit.map(|l| [l.re, l.im]),
            last_partial_product: [last.re, last.im],
            s_bar: r.s_bar,
        }
    }
}

fn curve_rows(r: &ProductKernelResult, prefix: &[String]) -> Vec<Vec<String>> {
    r.curve()
        .into_iter()
        .map(|(n, p, s)| {
            let mut row = prefix.to_vec();
            row.extend([n.to_string(), num(p.re), num(p.im), num(p.norm()), num(s)]);
            row
        })
        .collect()
}

fn curve_header(prefix: &[&str]) -> Vec<String> {
    prefix
        .iter()
        .chain(&["n", "re", "im", "abs", "s"])
        .map(|s| s.to_string())
        .collect()
}

/// Runs one command and returns its tables without touching the disk.
pub fn execute(
    command: Command,
    cfg: &ScenarioConfig,
    seed: u64,
    cap: Option<usize>,
) -> Result<OutputSet, CliError> {
    let space = build_space(cfg, cap)?;
    let mut out = OutputSet::new(&cfg.output.prefix);
    match command {
        Command::Kernel => kernel(cfg, &space, seed, &mut out)?,
        Command::Reduce => reduce(cfg, &space, &mut out)?,
        Command::Product => product(cfg, &space, &mut out)?,
        Command::Propagate => propagate(cfg, &space, seed, &mut out)?,
    }
    Ok(out)
}

#[derive(Serialize)]
struct KernelReport {
    command: &'static str,
    modes: usize,
    cutoff: usize,
    dim: usize,
    rows: usize,
    projector_rank: Option<usize>,
    s_bar: Option<f64>,
    gram_rank: Option<usize>,
}

fn kernel(
    cfg: &ScenarioConfig,
    space: &FockSpace,
    seed: u64,
    out: &mut OutputSet,
) -> Result<(), CliError> {
    let pairs = grid_pairs(cfg, Command::Kernel, seed)?;
    let constraint = build_constraint(cfg, space)?;
    let identity;
    let ren = match &constraint {
        Constraint::Projector(e) => hamiltonian(cfg, space, e)?,
        _ => {
            identity = ConstraintProjector::identity(space.dim());
            hamiltonian(cfg, space, &identity)?
        }
    };
    let states = CoherentStates::new(space, fiducial(cfg, space, ren.as_ref())?)?;
    for (a, b) in &pairs {
        states.check_label(a)?;
        states.check_label(b)?;
    }
    let (values, projector_rank, s_bar) = match &constraint {
        Constraint::None => {
            let v = pairs
                .iter()
                .map(|(a, b)| states.overlap(a, b))
                .collect::<rkck::Result<Vec<_>>>()?;
            (v, None, None)
        }
        Constraint::Projector(e) => {
            let k = ConstrainedKernel::new(&states, e)?;
            let s = e.coordinates(states.fiducial().vector()).norm_squared();
            (k.values(&pairs)?, Some(e.rank()), Some(s))
        }
        Constraint::Window(w) => {
            let v = pairs
                .iter()
                .map(|(a, b)| states.matrix_element(w, a, b))
                .collect::<rkck::Result<Vec<_>>>()?;
            let s = w
                .sandwich(states.fiducial().vector(), states.fiducial().vector())?
                .re;
            (v, None, Some(s))
        }
    };
    let gram_rank = match &cfg.grid {
        Some(GridSpec::Labels { labels }) if !labels.is_empty() => {
            let n = labels.len();
            let gram = nalgebra_matrix(n, &values);
            Some(kernel_rank(&gram)?)
        }
        _ => None,
    };
    kernel_table(out, "kernel.csv", space.modes(), &pairs, &values);
    if let Some(spec) = &cfg.oracle {
        let example = spec
            .example()
            .map_err(|e| CliError::invalid("oracle.example", e.to_string()))?;
        let v = pairs
            .iter()
            .map(|(a, b)| oracle_kernel(example, a, b, spec.time))
            .collect::<rkck::Result<Vec<_>>>()?;
        kernel_table(out, "oracle.csv", space.modes(), &pairs, &v);
    }
    out.add_json(
        "kernel.json",
        &KernelReport {
            command: "kernel",
            modes: space.modes(),
            cutoff: space.cutoff(),
            dim: space.dim(),
            rows: pairs.len(),
            projector_rank,
            s_bar,
            gram_rank,
        },
    );
    Ok(())
}

fn nalgebra_matrix(n: usize, row_major: &[C64]) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |i, j| row_major[i * n + j])
}

#[derive(Serialize)]
struct ReduceReport {
    command: &'static str,
    ladder: Vec<f64>,
    rescale_factors: Vec<f64>,
    ranks: Vec<Option<usize>>,
    order: Option<f64>,
    residual: f64,
    converged: bool,
    delta_independent: bool,
    limit_spectrum: Vec<f64>,
    limit_rank: usize,
}

fn reduce(cfg: &ScenarioConfig, space: &FockSpace, out: &mut OutputSet) -> Result<(), CliError> {
    let spec = cfg
        .reduce
        .as_ref()
        .ok_or_else(|| CliError::missing("reduce", Command::Reduce))?;
    let family = match &cfg.constraints {
        ConstraintSpec::MomentumWindow { mode, .. } => ConstraintFamily::MomentumWindow {
            mode: window_mode(*mode, space)?,
        },
        ConstraintSpec::None => return Err(CliError::missing("constraints", Command::Reduce)),
        _ => ConstraintFamily::Spectral(constraint_set(cfg, space)?.expect("non-empty spec")),
    };
    if spec.ladder.len() < 4 {
        return Err(CliError::invalid(
            "reduce.ladder",
            format!("need at least 4 rungs, got {}", spec.ladder.len()),
        ));
    }
    let states = CoherentStates::new(space, fiducial(cfg, space, None)?)?;
    let labels: Vec<CoherentLabel> = spec
        .labels
        .iter()
        .map(|l| l.to_label())
        .collect::<rkck::Result<_>>()?;
    let r = reduce_kernel_delta_limit(
        &states,
        &family,
        &labels,
        &spec.ladder,
        &(&spec.rescale).into(),
    )?;

    let n = labels.len();
    let pairs: Vec<Pair> = labels
        .iter()
        .flat_map(|a| labels.iter().map(move |b| (a.clone(), b.clone())))
        .collect();
    let limit: Vec<C64> = (0..n * n).map(|k| r.limit[(k / n, k % n)]).collect();
    kernel_table(out, "reduce_limit.csv", space.modes(), &pairs, &limit);

    let header: Vec<String> = ["delta", "rescale", "rank"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = r
        .ladder
        .iter()
        .zip(&r.rescale_factors)
        .zip(&r.ranks)
        .map(|((d, f), rank)| {
            vec![
                num(*d),
                num(*f),
                rank.map(|k| k.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    out.add_csv("reduce_ladder.csv", &header, &rows);
    out.add_json(
        "reduce.json",
        &ReduceReport {
            command: "reduce",
            ladder: r.ladder.clone(),
            rescale_factors: r.rescale_factors.clone(),
            ranks: r.ranks.clone(),
            order: r.order,
            residual: r.residual,
            converged: r.converged,
            delta_independent: r.delta_independent,
            limit_spectrum: r.limit_spectrum.clone(),
            limit_rank: r.limit_rank,
        },
    );
    Ok(())
}

fn sequences(
    cfg: &ScenarioConfig,
    command: Command,
) -> Result<(LabelSequence, LabelSequence, usize), CliError> {
    let spec = cfg
        .product
        .as_ref()
        .ok_or_else(|| CliError::missing("product", command))?;
    Ok((spec.bra.to_sequence()?, spec.ket.to_sequence()?, spec.n_max))
}

fn factors(
    kernel: &dyn FactorKernel,
    bra: &LabelSequence,
    ket: &LabelSequence,
    n_max: usize,
) -> rkck::Result<Vec<C64>> {
    (1..=n_max)
        .map(|n| kernel.factor(&bra.label(n)?, &ket.label(n)?))
        .collect()
}

fn product(cfg: &ScenarioConfig, space: &FockSpace, out: &mut OutputSet) -> Result<(), CliError> {
    let (bra, ket, n_max) = sequences(cfg, Command::Product)?;
    if bra.limit() != ket.limit() {
        return Err(rkck::Error::SectorMismatch(
            "bra and ket sequences have different limits".into(),
        )
        .into());
    }
    let constraint = build_constraint(cfg, space)?;
    let states = CoherentStates::new(space, fiducial(cfg, space, None)?)?;
    states.check_label(bra.limit())?;
    let values = match &constraint {
        Constraint::None => factors(&states, &bra, &ket, n_max)?,
        Constraint::Projector(e) => factors(&RescaledKernel::new(&states, e)?, &bra, &ket, n_max)?,
        Constraint::Window(_) => {
            return Err(CliError::invalid(
                "constraints.kind",
                "momentum windows are not supported by `product`",
            ))
        }
    };
    let mut r = classify_factors(&values)?;
    if let Constraint::Projector(e) = &constraint {
        r.s_bar = RescaledKernel::new(&states, e)?.s_bar();
    }
    let header: Vec<String> = ["n", "re", "im"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = values
        .iter()
        .enumerate()
        .map(|(k, f)| vec![(k + 1).to_string(), num(f.re), num(f.im)])
        .collect();
    out.add_csv("factors.csv", &header, &rows);
    out.add_csv("product.csv", &curve_header(&[]), &curve_rows(&r, &[]));
    out.add_json("product.json", &ProductReport::new(&r));
    Ok(())
}

#[derive(Serialize)]
struct TimedProduct {
    time: f64,
    fixed_point_deviation: f64,
    total_shift: f64,
    #[serde(flatten)]
    product: ProductReport,
}

#[derive(Serialize)]
struct PropagateReport {
    command: &'static str,
    branch: &'static str,
    energy_shift: f64,
    selected_index: usize,
    commutator_norm: f64,
    projector_rank: usize,
    s_bar: f64,
    products: Vec<TimedProduct>,
}

fn propagate(
    cfg: &ScenarioConfig,
    space: &FockSpace,
    seed: u64,
    out: &mut OutputSet,
) -> Result<(), CliError> {
    if cfg.hamiltonian.is_none() {
        return Err(CliError::missing("hamiltonian", Command::Propagate));
    }
    if cfg.times.is_empty() {
        return Err(CliError::missing("times", Command::Propagate));
    }
    let pairs = match &cfg.grid {
        Some(_) => grid_pairs(cfg, Command::Propagate, seed)?,
        None => Vec::new(),
    };
    let e = match build_constraint(cfg, space)? {
        Constraint::None => ConstraintProjector::identity(space.dim()),
        Constraint::Projector(e) => e,
        Constraint::Window(_) => {
            return Err(CliError::invalid(
                "constraints.kind",
                "momentum windows are not supported by `propagate`",
            ))
        }
    };
    let ren = hamiltonian(cfg, space, &e)?.expect("checked above");
    let states = CoherentStates::new(space, fiducial(cfg, space, Some(&ren))?)?;
    for (a, b) in &pairs {
        states.check_label(a)?;
        states.check_label(b)?;
    }
    let s_bar = e.coordinates(states.fiducial().vector()).norm_squared();
    if s_bar <= rkck::product::S_BAR_THRESHOLD {
        return Err(rkck::Error::IncompatibleFiducial(s_bar).into());
    }

    let spectrum = spectrum_report(&e, &ren.h_bar)?;
    let header: Vec<String> = ["index", "eigenvalue", "physical"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = spectrum
        .iter()
        .map(|s| {
            vec![
                s.index.to_string(),
                num(s.eigenvalue),
                s.physical.to_string(),
            ]
        })
        .collect();
    out.add_csv("spectrum.csv", &header, &rows);

    if !pairs.is_empty() {
        let mut header = vec!["t".to_string()];
        header.extend(label_header(space.modes()));
        header.extend(["re".to_string(), "im".to_string()]);
        let mut rows = Vec::new();
        for &t in &cfg.times {
            let x = constrained_propagator(&e, &ren.h_bar, t, ren.branch)?;
            for pair in &pairs {
                let v = states.matrix_element(&x, &pair.0, &pair.1)? / s_bar;
                let mut row = vec![num(t)];
                row.extend(label_cells(pair));
                row.extend([num(v.re), num(v.im)]);
                rows.push(row);
            }
        }
        out.add_csv("propagate.csv", &header, &rows);
    }

    let mut products = Vec::new();
    if cfg.product.is_some() {
        let (bra, ket, n_max) = sequences(cfg, Command::Propagate)?;
        let mut rows = Vec::new();
        for &t in &cfg.times {
            let r = product_propagator(&states, &e, &ren, &bra, &ket, t, n_max)?;
            rows.extend(curve_rows(&r.product, &[num(t)]));
            products.push(TimedProduct {
                time: t,
                fixed_point_deviation: r.fixed_point_deviation,
                total_shift: r.total_shift,
                product: ProductReport::new(&r.product),
            });
        }
        out.add_csv("propagate_product.csv", &curve_header(&["t"]), &rows);
    }

    out.add_json(
        "propagate.json",
        &PropagateReport {
            command: "propagate",
            branch: match ren.branch {
                Branch::General => "general",
                Branch::Commuting => "commuting",
            },
            energy_shift: ren.energy_shift,
            selected_index: ren.selected_index,
            commutator_norm: commutator_norm(&e, &ren.h)?,
            projector_rank: e.rank(),
            s_bar,
            products,
        },
    );
    Ok(())
}
