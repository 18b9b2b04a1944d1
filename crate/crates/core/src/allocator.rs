//! Budget-constrained selection of intervention candidates.
//!
//! Choose a subset maximizing total utility with total cost within the
//! budget, optionally requiring a minimum number of selections per group.
//! Costs are integerized on a grid of `cost_resolution` so the exact solver can
//! run a 0/1 knapsack DP: costs round to the nearest step and the budget rounds
//! down. Rounding can let a selection overspend by up to half a step per item;
//! when the optimum does, the exact solvers re-solve with costs rounded up,
//! where every grid-feasible selection fits the real budget.
//!
//! All solvers order candidates by `record_id`. Among selections of equal
//! utility the preferred one includes the earliest record at the first point
//! where two selections differ.

use std::collections::BTreeMap;
use std::collections::HashSet;

use bitvec::vec::BitVec;
use serde::{Deserialize, Serialize};

use crate::data::Group;
use crate::error::{Error, Result};

/// Default grid: the budget split into this many steps.
pub const DEFAULT_BUDGET_STEPS: f64 = 10_000.0;

pub const BRUTE_FORCE_LIMIT: usize = 20;

/// DP decision table limit, in bits.
const MAX_TABLE_BITS: u128 = 1 << 33;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub record_id: String,
    pub utility: f64,
    pub cost: f64,
    pub group: Group,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationProblem {
    pub candidates: Vec<Candidate>,
    pub budget: f64,
    #[serde(default)]
    pub floors: BTreeMap<Group, usize>,
    /// Cost grid step; `budget / 10000` when absent.
    #[serde(default)]
    pub cost_resolution: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Dp,
    Greedy,
    BruteForce,
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(Solver::Dp),
            "greedy" => Ok(Solver::Greedy),
            "brute_force" | "bruteforce" => Ok(Solver::BruteForce),
            other => Err(Error::InvalidConfig(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    /// Selected record ids in ascending order.
    pub selected: Vec<String>,
    pub total_utility: f64,
    pub total_cost: f64,
    pub per_group_counts: BTreeMap<Group, usize>,
    pub solver: Solver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rounding {
    Nearest,
    Up,
}

/// Validated instance on the integer cost grid, candidates sorted by id.
struct Grid<'a> {
    items: Vec<&'a Candidate>,
    weights: Vec<u64>,
    capacity: u64,
    floors: [usize; 2],
}

fn group_index(g: Group) -> usize {
    match g {
        Group::Rural => 0,
        Group::Urban => 1,
    }
}

impl AllocationProblem {
    pub fn resolution(&self) -> f64 {
        self.cost_resolution.unwrap_or(if self.budget > 0.0 {
            self.budget / DEFAULT_BUDGET_STEPS
        } else {
            1.0
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "budget {} must be finite and >= 0",
                self.budget
            )));
        }
        let res = self.resolution();
        if !(res.is_finite() && res > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cost_resolution {res} must be finite and > 0"
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.candidates {
            if !(c.utility.is_finite() && c.utility >= 0.0) {
                return Err(Error::InvalidData(format!(
                    "candidate {}: utility {} must be finite and >= 0",
                    c.record_id, c.utility
                )));
            }
            if !(c.cost.is_finite() && c.cost >= 0.0) {
                return Err(Error::InvalidData(format!(
                    "candidate {}: cost {} must be finite and >= 0",
                    c.record_id, c.cost
                )));
            }
            if !seen.insert(c.record_id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate candidate {}", c.record_id)));
            }
        }
        Ok(())
    }

    fn grid(&self, rounding: Rounding) -> Result<Grid<'_>> {
        self.validate()?;
        let res = self.resolution();
        let mut items: Vec<&Candidate> = self.candidates.iter().collect();
        items.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        let weights = items
            .iter()
            .map(|c| {
                let x = c.cost / res;
                let w = match rounding {
                    Rounding::Nearest => x.round(),
                    // relative slack absorbs representation error from scaling
                    Rounding::Up => (x - 1e-9 * x.max(1.0)).ceil(),
                };
                w.max(0.0) as u64
            })
            .collect();
        let b = self.budget / res;
        let capacity = (b + 1e-9 * b.max(1.0)).floor().max(0.0) as u64;
        let mut floors = [0usize; 2];
        for (&g, &f) in &self.floors {
            floors[group_index(g)] = f;
        }
        let grid = Grid {
            items,
            weights,
            capacity,
            floors,
        };
        grid.check_floors(res)?;
        Ok(grid)
    }
}

impl Grid<'_> {
    fn check_floors(&self, res: f64) -> Result<()> {
        let mut needed: Vec<(Group, u64)> = Vec::new();
        for g in Group::ALL {
            let floor = self.floors[group_index(g)];
            if floor == 0 {
                continue;
            }
            let mut w: Vec<u64> = self
                .items
                .iter()
                .zip(&self.weights)
                .filter(|(c, _)| c.group == g)
                .map(|(_, &w)| w)
                .collect();
            if w.len() < floor {
                return Err(Error::InfeasibleFloors {
                    group: g,
                    reason: format!("needs {floor} selections but has {} candidates", w.len()),
                });
            }
            w.sort_unstable();
            needed.push((g, w[..floor].iter().sum()));
        }
        let total: u64 = needed.iter().map(|n| n.1).sum();
        if total > self.capacity {
            let &(group, cost) = needed
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .expect("non-empty when over capacity");
            return Err(Error::InfeasibleFloors {
                group,
                reason: format!(
                    "floor needs at least {:.4} of cost; all floors together need {:.4} but the budget is {:.4}",
                    cost as f64 * res,
                    total as f64 * res,
                    self.capacity as f64 * res
                ),
            });
        }
        Ok(())
    }

    fn result(&self, chosen: &[usize], solver: Solver) -> AllocationResult {
        let mut per_group_counts: BTreeMap<Group, usize> = Group::ALL.iter().map(|&g| (g, 0)).collect();
        for &i in chosen {
            *per_group_counts.get_mut(&self.items[i].group).unwrap() += 1;
        }
        AllocationResult {
            selected: chosen.iter().map(|&i| self.items[i].record_id.clone()).collect(),
            total_utility: fold_utility(self.items.iter().map(|c| c.utility), chosen),
            total_cost: chosen.iter().fold(0.0, |acc, &i| acc + self.items[i].cost),
            per_group_counts,
            solver,
        }
    }
}

/// `u_{i1} + (u_{i2} + (... + 0))` over ascending indices: the order the DP sums in.
fn fold_utility(utilities: impl Iterator<Item = f64>, chosen: &[usize]) -> f64 {
    let u: Vec<f64> = utilities.collect();
    chosen.iter().rev().fold(0.0, |acc, &i| u[i] + acc)
}

/// Exact optimum on the cost grid by suffix DP over (item, remaining budget,
/// per-group counts capped at their floors).
pub fn solve_dp(p: &AllocationProblem) -> Result<AllocationResult> {
    solve_exact(p, Solver::Dp, dp_on)
}

/// Solve on the nearest grid, falling back to the round-up grid when the
/// nearest-grid optimum overspends the real budget.
fn solve_exact(
    p: &AllocationProblem,
    solver: Solver,
    on: fn(&Grid<'_>) -> Result<Vec<usize>>,
) -> Result<AllocationResult> {
    let grid = p.grid(Rounding::Nearest)?;
    let result = grid.result(&on(&grid)?, solver);
    if result.total_cost <= p.budget + 1e-9 {
        return Ok(result);
    }
    log::debug!(
        "rounded optimum costs {} > budget {}; re-solving with costs rounded up",
        result.total_cost,
        p.budget
    );
    let grid = p.grid(Rounding::Up)?;
    let chosen = on(&grid)?;
    Ok(grid.result(&chosen, solver))
}

fn dp_on(grid: &Grid<'_>) -> Result<Vec<usize>> {
    let n = grid.items.len();
    let cap = grid.capacity as usize;
    let [fr, fu] = grid.floors;
    let states = (fr + 1) * (fu + 1);
    let width = (cap + 1) * states;
    let table_bits = n as u128 * width as u128;
    if table_bits > MAX_TABLE_BITS {
        return Err(Error::InvalidConfig(format!(
            "dp table of {table_bits} cells is too large; use a coarser cost_resolution"
        )));
    }

    let bump = |s: usize, g: Group| -> usize {
        let (r, u) = (s / (fu + 1), s % (fu + 1));
        match g {
            Group::Rural => (r + 1).min(fr) * (fu + 1) + u,
            Group::Urban => r * (fu + 1) + (u + 1).min(fu),
        }
    };
    let complete = fr * (fu + 1) + fu;

    // best[c * states + s]: best utility from the remaining items, and
    // whether the preferred selection achieving it is non-empty
    let mut next = vec![f64::NEG_INFINITY; width];
    for c in 0..=cap {
        next[c * states + complete] = 0.0;
    }
    let mut cur = vec![f64::NEG_INFINITY; width];
    let mut next_nonempty = vec![false; width];
    let mut cur_nonempty = vec![false; width];
    let mut take: BitVec = BitVec::repeat(false, n * width);

    for i in (0..n).rev() {
        let w = grid.weights[i] as usize;
        let u = grid.items[i].utility;
        let g = grid.items[i].group;
        for c in 0..=cap {
            for s in 0..states {
                let k = c * states + s;
                let skip = next[k];
                let (mut best, mut nonempty) = (skip, next_nonempty[k]);
                if w <= c {
                    let inc = u + next[(c - w) * states + bump(s, g)];
                    // on a tie, [i, ..] sorts before any later-starting
                    // selection but after the empty one
                    if inc != f64::NEG_INFINITY && (inc > skip || (inc == skip && next_nonempty[k])) {
                        best = inc;
                        nonempty = true;
                        take.set(i * width + k, true);
                    }
                }
                cur[k] = best;
                cur_nonempty[k] = nonempty;
            }
        }
        std::mem::swap(&mut cur, &mut next);
        std::mem::swap(&mut cur_nonempty, &mut next_nonempty);
    }

    if next[cap * states] == f64::NEG_INFINITY {
        // unreachable after check_floors, kept as a guard
        return Err(Error::InfeasibleFloors {
            group: Group::Rural,
            reason: "no selection satisfies the floors".into(),
        });
    }

    let mut chosen = Vec::new();
    let (mut c, mut s) = (cap, 0usize);
    for i in 0..n {
        if take[i * width + c * states + s] {
            chosen.push(i);
            c -= grid.weights[i] as usize;
            s = bump(s, grid.items[i].group);
        }
    }
    Ok(chosen)
}

/// Exhaustive enumeration; the test oracle for [`solve_dp`].
pub fn solve_bruteforce(p: &AllocationProblem) -> Result<AllocationResult> {
    if p.candidates.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::InvalidConfig(format!(
            "brute force is limited to {BRUTE_FORCE_LIMIT} candidates, got {}",
            p.candidates.len()
        )));
    }
    solve_exact(p, Solver::BruteForce, brute_on)
}

fn brute_on(grid: &Grid<'_>) -> Result<Vec<usize>> {
    let n = grid.items.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1u32 << n) {
        let chosen: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let weight: u64 = chosen.iter().map(|&i| grid.weights[i]).sum();
        if weight > grid.capacity {
            continue;
        }
        let mut counts = [0usize; 2];
        for &i in &chosen {
            counts[group_index(grid.items[i].group)] += 1;
        }
        if counts[0] < grid.floors[0] || counts[1] < grid.floors[1] {
            continue;
        }
        let value = fold_utility(grid.items.iter().map(|c| c.utility), &chosen);
        // ties go to the lexicographically smallest id sequence
        let better = match &best {
            None => true,
            Some((v, b)) => value > *v || (value == *v && chosen < *b),
        };
        if better {
            best = Some((value, chosen));
        }
    }
    let (_, chosen) = best.ok_or_else(|| Error::InfeasibleFloors {
        group: Group::Rural,
        reason: "no selection satisfies the floors".into(),
    })?;
    Ok(chosen)
}

/// Ratio heuristic: first meet each group's floor with its best
/// utility/cost items, then fill the remaining budget by global ratio.
/// Works on the round-up grid, so it never overspends.
pub fn solve_greedy(p: &AllocationProblem) -> Result<AllocationResult> {
    let grid = p.grid(Rounding::Up)?;
    let n = grid.items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (ua, ub) = (grid.items[a].utility, grid.items[b].utility);
        let (wa, wb) = (grid.weights[a] as f64, grid.weights[b] as f64);
        // ratio descending via cross products, which also handles zero costs
        (ub * wa)
            .total_cmp(&(ua * wb))
            .then_with(|| ub.total_cmp(&ua))
            .then_with(|| a.cmp(&b))
    });

    let mut selected = vec![false; n];
    let mut used = 0u64;
    let mut counts = [0usize; 2];

    // cheapest way to finish every floor with the items still unselected
    let completion = |selected: &[bool], counts: &[usize; 2], skip: usize| -> u64 {
        let mut total = 0;
        for g in Group::ALL {
            let gi = group_index(g);
            let need = grid.floors[gi].saturating_sub(counts[gi]);
            if need == 0 {
                continue;
            }
            let mut w: Vec<u64> = (0..n)
                .filter(|&j| j != skip && !selected[j] && grid.items[j].group == g)
                .map(|j| grid.weights[j])
                .collect();
            w.sort_unstable();
            total += w.iter().take(need).sum::<u64>();
        }
        total
    };

    for g in Group::ALL {
        let gi = group_index(g);
        for &i in &order {
            if counts[gi] >= grid.floors[gi] {
                break;
            }
            if grid.items[i].group != g || selected[i] {
                continue;
            }
            let mut after = counts;
            after[gi] += 1;
            if used + grid.weights[i] + completion(&selected, &after, i) <= grid.capacity {
                selected[i] = true;
                used += grid.weights[i];
                counts = after;
            }
        }
    }

    for &i in &order {
        if !selected[i] && used + grid.weights[i] <= grid.capacity {
            selected[i] = true;
            used += grid.weights[i];
        }
    }

    let chosen: Vec<usize> = (0..n).filter(|&i| selected[i]).collect();
    Ok(grid.result(&chosen, Solver::Greedy))
}

pub fn solve(p: &AllocationProblem, solver: Solver) -> Result<AllocationResult> {
    match solver {
        Solver::Dp => solve_dp(p),
        Solver::Greedy => solve_greedy(p),
        Solver::BruteForce => solve_bruteforce(p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMode {
    /// Utility is the priority score itself.
    #[default]
    Score,
    /// Score weighted by the affected population.
    ScoreTimesPopulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub record_id: String,
    pub score: f64,
    pub group: Group,
    pub cost: f64,
    #[serde(default)]
    pub population: Option<f64>,
}

pub fn build_problem(
    scores: &[ScoredCandidate],
    budget: f64,
    floors: BTreeMap<Group, usize>,
    utility_mode: UtilityMode,
    cost_resolution: Option<f64>,
) -> Result<AllocationProblem> {
    let mut candidates = Vec::with_capacity(scores.len());
    for s in scores {
        if s.cost.is_nan() || s.cost < 0.0 {
            return Err(Error::InvalidData(format!(
                "candidate {}: negative cost {}",
                s.record_id, s.cost
            )));
        }
        let utility = match utility_mode {
            UtilityMode::Score => s.score,
            UtilityMode::ScoreTimesPopulation => {
                let pop = s
                    .population
                    .ok_or_else(|| Error::InvalidData(format!("candidate {}: population required", s.record_id)))?;
                s.score * pop
            }
        };
        candidates.push(Candidate {
            record_id: s.record_id.clone(),
            utility,
            cost: s.cost,
            group: s.group,
        });
    }
    candidates.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    Ok(AllocationProblem {
        candidates,
        budget,
        floors,
        cost_resolution,
    })
}
