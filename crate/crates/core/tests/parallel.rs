use npgd::parallel::*;

#[test]
fn par_map_preserves_order() {
    let items: Vec<u64> = (0..100).collect();
    let seq = par_map(Execution::Sequential, &items, |i, &x| (i as u64) * 1000 + x * x);
    let par = with_threads(3, || par_map(Execution::Parallel, &items, |i, &x| (i as u64) * 1000 + x * x));
    assert_eq!(seq, par);
    assert_eq!(seq[7], 7049);
}

#[test]
fn try_par_map_reports_first_error_in_order() {
    let items: Vec<i32> = (0..20).collect();
    let r: Result<Vec<i32>, String> = try_par_map(Execution::Sequential, &items, |_, &x| {
        if x % 7 == 6 { Err(format!("bad {x}")) } else { Ok(x) }
    });
    assert_eq!(r, Err("bad 6".into()));
    let ok: Result<Vec<i32>, String> = try_par_map(Execution::Parallel, &items, |_, &x| Ok(x + 1));
    assert_eq!(ok.unwrap()[19], 20);
}

#[test]
fn execution_for_threads() {
    assert_eq!(Execution::for_threads(1), Execution::Sequential);
    if cfg!(feature = "parallel") {
        assert_eq!(Execution::for_threads(4), Execution::Parallel);
    }
}
