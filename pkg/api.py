from __future__ import annotations

from typing import Dict

import uvicorn
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from harness import __version__
from harness.router import router as rscmd_router

app = FastAPI(
    title="RS-CMD API",
    description="Max-min fair rate-splitting beamforming for cache-aided C-RAN",
    version=__version__,
)

origins = [
    "http://localhost:3000",
    "http://127.0.0.1:3000",
]

app.add_middleware(
    CORSMiddleware,
    allow_origins=origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(rscmd_router)


@app.get("/health")
def health_check() -> Dict[str, str]:
    return {"status": "ok", "version": __version__}


if __name__ == "__main__":
    uvicorn.run("api:app", host="0.0.0.0", port=8000, reload=False)
