//! Budget ledger: sequential and parallel composition, previews, rejection,
//! and replay of the persisted ledger after a restart.

use dpvs::{Accountant, ChargeOutcome, ChargeRecord, PrivacyParams, Result};

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let total = PrivacyParams::new(2.0, 1e-5)?;
    {
        let acc = Accountant::open(dir.path())?;
        acc.create_ledger("returns-2019", total)?;

        acc.try_charge("returns-2019", ChargeRecord::sequential("mean income", PrivacyParams::pure(0.5)?))?;
        // Disjoint subsets charged in one parallel group cost only their maximum.
        for (state, eps) in [("CA", 0.3), ("NY", 0.4), ("TX", 0.2)] {
            let rec = ChargeRecord::parallel(format!("count {state}"), PrivacyParams::pure(eps)?, "by-state");
            acc.try_charge("returns-2019", rec)?;
        }
        println!("spent after four charges: {:?}", acc.spent("returns-2019")?);

        let big = ChargeRecord::sequential("regression", PrivacyParams::new(1.5, 1e-6)?);
        let preview = acc.preview_charge("returns-2019", &big)?;
        println!("preview of (1.5, 1e-6): accept {}, remaining after {:?}", preview.would_accept, preview.remaining_after);
        match acc.try_charge("returns-2019", big)? {
            ChargeOutcome::Accepted { remaining } => println!("accepted, remaining {remaining:?}"),
            ChargeOutcome::Rejected { remaining } => println!("rejected, remaining {remaining:?}"),
        }
        let fits = ChargeRecord::sequential("regression", PrivacyParams::new(1.0, 1e-6)?);
        println!("(1.0, 1e-6): {:?}", acc.try_charge("returns-2019", fits)?);
    }

    let reopened = Accountant::open(dir.path())?;
    let ledger = reopened.snapshot("returns-2019")?;
    println!("\nafter reopening: {} charges, spent {:?}", ledger.charges().len(), ledger.spent());
    for c in ledger.charges() {
        println!("  {:<12} eps {:<4} delta {:e} {:?}", c.query_id, c.params.epsilon(), c.params.delta(), c.composition);
    }
    let path = reopened.ledger_path("returns-2019").unwrap();
    println!("\nledger file {}:\n{}", path.display(), std::fs::read_to_string(&path)?);
    Ok(())
}
