use octforest::transport::{run, run_ok, Comm, Schedule};
use octforest::Error;
use proptest::prelude::*;

fn exchange(plan: &[Vec<u8>], c: &Comm) -> octforest::Result<u64> {
    let me = c.rank();
    let n = c.size();
    for q in 0..n {
        for k in 0..plan[me][q] {
            c.send_words(q, &[me as u64, q as u64, k as u64])?;
        }
    }
    let mut acc = 0;
    for q in 0..n {
        for _ in 0..plan[q][me] {
            let w = c.recv_words(q)?;
            acc = acc * 31 + w.iter().sum::<u64>();
        }
    }
    let all = c.allgather_u64(acc)?;
    Ok(all.iter().sum())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn traces_are_reproducible_and_schedule_independent(n in 1usize..5, seed in any::<u64>()) {
        let plan: Vec<Vec<u8>> = (0..n).map(|p| (0..n).map(|q| ((seed >> ((p * 5 + q) % 60)) & 3) as u8).collect()).collect();
        let a = run_ok(n, Schedule::RoundRobin, |c| exchange(&plan, c)).unwrap();
        let b = run_ok(n, Schedule::Parallel, |c| exchange(&plan, c)).unwrap();
        let a2 = run_ok(n, Schedule::RoundRobin, |c| exchange(&plan, c)).unwrap();
        prop_assert_eq!(&a.results, &b.results);
        prop_assert_eq!(a.trace.hash(), b.trace.hash());
        prop_assert_eq!(a.trace.to_json_lines(), a2.trace.to_json_lines());
        let sends: usize = plan.iter().flatten().map(|&k| k as usize).sum();
        prop_assert_eq!(a.trace.count("send"), sends);
        prop_assert_eq!(a.trace.count("recv"), sends);
        prop_assert_eq!(a.trace.count("allgather"), n);
    }
}

#[test]
fn panics_and_deadlocks_are_reported() {
    let r = run(3, Schedule::Parallel, |c| if c.rank() == 1 { panic!("boom") } else { c.rank() });
    assert!(matches!(r, Err(Error::RankPanic(1))));
    let r = run_ok(3, Schedule::RoundRobin, |c| if c.rank() == 2 { Ok(()) } else { c.recv(2).map(|_| ()) });
    match r {
        Err(Error::Deadlock { blocked }) => assert_eq!(blocked, vec![0, 1]),
        other => panic!("{:?}", other.map(|_| ())),
    }
}

#[test]
fn trace_lines_are_json() {
    let r = run_ok(2, Schedule::RoundRobin, |c| c.allgather(vec![c.rank() as u8; 3])).unwrap();
    for line in r.trace.to_json_lines().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("epoch").is_some() && v.get("checksum").is_some() && v.get("len").is_some());
    }
}
