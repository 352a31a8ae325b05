use std::time::Instant;

/// Wall-clock split of one MPC solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    /// Optimizer only (s).
    pub opt: f64,
    /// Problem construction plus optimizer (s).
    pub total: f64,
}

/// Times `build` and then `solve` on its output. Warm starting is up to the
/// `solve` closure.
pub fn time_solver<P, T, E, B, S>(build: B, solve: S) -> Result<(T, Timing), E>
where
    B: FnOnce() -> Result<P, E>,
    S: FnOnce(&P) -> Result<T, E>,
{
    let start = Instant::now();
    let problem = build()?;
    let built = start.elapsed().as_secs_f64();
    let t = Instant::now();
    let out = solve(&problem)?;
    let opt = t.elapsed().as_secs_f64();
    Ok((
        out,
        Timing {
            opt,
            total: built + opt,
        },
    ))
}

/// For solvers that build nothing beforehand; total equals optimization time.
pub fn time_direct<T, E, S>(solve: S) -> Result<(T, Timing), E>
where
    S: FnOnce() -> Result<T, E>,
{
    let t = Instant::now();
    let out = solve()?;
    let opt = t.elapsed().as_secs_f64();
    Ok((out, Timing { opt, total: opt }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_covers_optimization() {
        let ((), t) = time_solver(
            || -> Result<Vec<f64>, ()> { Ok((0..20000).map(|i| i as f64).collect()) },
            |v| {
                std::hint::black_box(v.iter().sum::<f64>());
                Ok(())
            },
        )
        .unwrap();
        assert!(t.total >= t.opt);
    }

    #[test]
    fn noop_is_fast() {
        let ((), t) = time_solver(|| Ok::<_, ()>(()), |_| Ok(())).unwrap();
        assert!(t.total < 1e-3);
        let ((), d) = time_direct(|| Ok::<_, ()>(())).unwrap();
        assert_eq!(d.opt, d.total);
    }

    #[test]
    fn errors_propagate() {
        let r: Result<((), Timing), &str> = time_solver(|| Err("build"), |_: &()| Ok(()));
        assert_eq!(r.unwrap_err(), "build");
    }
}
